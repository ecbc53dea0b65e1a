// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include "keytag/config.hpp"

#include "keytag/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace keytag {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

long long parse_int(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const long long parsed = std::stoll(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " wants an integer, got '" +
                          value + "'");
    }
}

unsigned long long parse_seed(const std::string& key,
                              const std::string& value) {
    try {
        if (!value.empty() && value[0] == '-')
            throw std::invalid_argument(value);
        std::size_t used = 0;
        const unsigned long long parsed = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key +
                          " wants a non-negative integer, got '" + value +
                          "'");
    }
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double parsed = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("config: " + key + " wants a number, got '" +
                          value + "'");
    }
}

bool parse_flag(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: " + key + " wants true or false, got '" +
                      value + "'");
}

std::vector<std::string> parse_list(const std::string& key,
                                    const std::string& value) {
    std::vector<std::string> items;
    std::istringstream in(value);
    for (std::string item; std::getline(in, item, ',');) {
        item = trim(item);
        if (item.empty()) {
            throw ConfigError("config: " + key +
                              " holds an empty list entry");
        }
        items.push_back(item);
    }
    return items;
}

} // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text) {
    std::vector<std::pair<std::string, std::string>> settings;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    for (int line_no = 1; std::getline(in, line); ++line_no) {
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto equals = stripped.find('=');
        if (equals == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " has no '='");
        }
        const std::string key = trim(stripped.substr(0, equals));
        const std::string value = trim(stripped.substr(equals + 1));
        if (key.empty()) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " has an empty key");
        }
        if (!seen.insert(key).second) {
            throw ConfigError("config: line " + std::to_string(line_no) +
                              " repeats key '" + key + "'");
        }
        settings.emplace_back(key, value);
    }
    return settings;
}

void apply_setting(RunConfig& config, const std::string& key,
                   const std::string& value) {
    // Paths and inventory.
    if (key == "train_corpus") config.train_corpus = value;
    else if (key == "dev_corpus") config.dev_corpus = value;
    else if (key == "test_corpus") config.test_corpus = value;
    else if (key == "embeddings") config.embeddings = value;
    else if (key == "domains") config.domains_path = value;
    else if (key == "topics_model") config.topics_path = value;
    else if (key == "checkpoint") config.checkpoint = value;
    else if (key == "output_dir") config.output_dir = value;
    else if (key == "types") config.types = parse_list(key, value);
    else if (key == "min_count")
        config.min_count = static_cast<int>(parse_int(key, value));
    else if (key == "seed") {
        config.seed = parse_seed(key, value);
        config.seed_set = true;
    }
    // Encoder.
    else if (key == "embedding_width")
        config.encoder.embedding_width =
            static_cast<int>(parse_int(key, value));
    else if (key == "lstm_hidden")
        config.encoder.lstm_hidden = static_cast<int>(parse_int(key, value));
    else if (key == "lstm_layers")
        config.encoder.lstm_layers = static_cast<int>(parse_int(key, value));
    else if (key == "disc_hidden")
        config.encoder.disc_hidden = static_cast<int>(parse_int(key, value));
    else if (key == "use_precomputed")
        config.encoder.use_precomputed = parse_flag(key, value);
    else if (key == "dropout_rate")
        config.encoder.dropout_rate = parse_real(key, value);
    else if (key == "hard_o_to_i")
        config.encoder.hard_o_to_i = parse_flag(key, value);
    // Training.
    else if (key == "epochs")
        config.train.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size")
        config.train.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "learning_rate")
        config.train.learning_rate = parse_real(key, value);
    else if (key == "optimizer")
        config.train.optimizer = optimizer_from_string(value);
    else if (key == "lambda") config.train.lambda = parse_real(key, value);
    else if (key == "epsilon") config.train.epsilon = parse_real(key, value);
    else if (key == "adversarial")
        config.train.adversarial_enabled = parse_flag(key, value);
    else if (key == "gradient_clip_norm")
        config.train.gradient_clip_norm = parse_real(key, value);
    else if (key == "momentum")
        config.train.momentum = parse_real(key, value);
    else if (key == "adam_beta1")
        config.train.adam_beta1 = parse_real(key, value);
    else if (key == "adam_beta2")
        config.train.adam_beta2 = parse_real(key, value);
    else if (key == "adam_epsilon")
        config.train.adam_epsilon = parse_real(key, value);
    // Topics.
    else if (key == "topic_kind")
        config.topics.kind = topic_kind_from_string(value);
    else if (key == "topics_k")
        config.topics.k = static_cast<int>(parse_int(key, value));
    else if (key == "topic_alpha")
        config.topics.alpha = parse_real(key, value);
    else if (key == "topic_beta")
        config.topics.beta = parse_real(key, value);
    else if (key == "topic_iterations")
        config.topics.iterations = static_cast<int>(parse_int(key, value));
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
    if (!seed_set) {
        throw ConfigError("config: seed is required; runs must be "
                          "reproducible");
    }
    if (min_count < 1) {
        throw ConfigError("config: min_count must be at least 1");
    }
    encoder.validate();
    train.validate();
    if (topics.k < 1) throw ConfigError("config: topics_k must be positive");
    if (topics.alpha < 0.0) {
        throw ConfigError("config: topic_alpha must be non-negative "
                          "(0 selects the 50/K default)");
    }
    if (!(topics.beta > 0.0)) {
        throw ConfigError("config: topic_beta must be positive");
    }
    if (topics.iterations < 1) {
        throw ConfigError("config: topic_iterations must be at least 1");
    }
    std::set<std::string> unique;
    for (const std::string& type : types) {
        if (type == "O") {
            throw ConfigError("config: 'O' is the reserved outside label, "
                              "not a type");
        }
        if (!unique.insert(type).second) {
            throw ConfigError("config: duplicate type '" + type + "'");
        }
    }
}

RunConfig load_run_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("config: cannot read '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();

    RunConfig config;
    for (const auto& [key, value] : parse_config_text(buffer.str())) {
        apply_setting(config, key, value);
    }
    for (const auto& [key, value] : overrides) {
        apply_setting(config, key, value);
    }
    config.train.seed = config.seed;
    config.topics.seed = config.seed;
    config.validate();
    return config;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot read '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

} // namespace keytag
