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

#ifndef KEYTAG_CONFIG_HPP
#define KEYTAG_CONFIG_HPP

#include "keytag/model.hpp"
#include "keytag/topics.hpp"
#include "keytag/train.hpp"

#include <string>
#include <utility>
#include <vector>

namespace keytag {

/// Everything one run needs, merged from a flat `key = value` file and
/// command-line overrides. Sub-configs keep their own defaults; the shared
/// seed is mandatory and copied into them on load.
///
/// Keys: train_corpus, dev_corpus, test_corpus, embeddings, domains,
///       topics_model, checkpoint, output_dir, types, min_count, seed,
///       embedding_width, lstm_hidden, lstm_layers, disc_hidden,
///       use_precomputed, dropout_rate, hard_o_to_i, epochs, batch_size,
///       learning_rate, optimizer, lambda, epsilon, adversarial,
///       gradient_clip_norm, momentum, adam_beta1, adam_beta2,
///       adam_epsilon, topic_kind, topics_k, topic_alpha, topic_beta,
///       topic_iterations
struct RunConfig {
    EncoderConfig encoder;
    TrainConfig train;
    TopicConfig topics;

    std::string train_corpus;
    std::string dev_corpus;
    std::string test_corpus;
    std::string embeddings;
    std::string domains_path;
    std::string topics_path;
    std::string checkpoint;
    std::string output_dir;

    std::vector<std::string> types; // KC type inventory, as declared
    int min_count = 1;
    unsigned long long seed = 0;
    bool seed_set = false;

    void validate() const; // ConfigError when out of range or seed missing
};

/// One `key = value` per line, returned in file order. Lines whose first
/// non-blank character is '#' are comments; blank lines are skipped.
/// Malformed lines and duplicate keys raise ConfigError with the line
/// number.
std::vector<std::pair<std::string, std::string>> parse_config_text(
    const std::string& text);

/// Applies one setting in place. ConfigError on unknown keys and
/// unparseable values, naming the key.
void apply_setting(RunConfig& config, const std::string& key,
                   const std::string& value);

/// File settings first, then overrides in order (so overrides win), then
/// validation. An unreadable file is a ConfigError: the configuration
/// itself is what is broken.
RunConfig load_run_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// Whole file as a string; DataError when unreadable.
std::string read_text_file(const std::string& path);

} // namespace keytag

#endif // KEYTAG_CONFIG_HPP
