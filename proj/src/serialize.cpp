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

#include "keytag/serialize.hpp"

#include "keytag/errors.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

namespace keytag {

namespace {

constexpr const char* magic = "keytag-container";

void write_f32_le(std::ostream& out, float value) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    const char bytes[4] = {
        static_cast<char>(bits & 0xff),
        static_cast<char>((bits >> 8) & 0xff),
        static_cast<char>((bits >> 16) & 0xff),
        static_cast<char>((bits >> 24) & 0xff),
    };
    out.write(bytes, 4);
}

float read_f32_le(std::istream& in) {
    unsigned char bytes[4];
    in.read(reinterpret_cast<char*>(bytes), 4);
    if (!in) {
        throw CheckpointError("container: truncated array payload");
    }
    const std::uint32_t bits =
        static_cast<std::uint32_t>(bytes[0]) |
        (static_cast<std::uint32_t>(bytes[1]) << 8) |
        (static_cast<std::uint32_t>(bytes[2]) << 16) |
        (static_cast<std::uint32_t>(bytes[3]) << 24);
    return std::bit_cast<float>(bits);
}

bool has_whitespace(const std::string& s) {
    for (const char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) return true;
    }
    return false;
}

std::string format_double(double value) {
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

} // namespace

Container::Container(std::string kind, int version)
    : kind_{std::move(kind)}, version_{version} {
    if (kind_.empty() || has_whitespace(kind_)) {
        throw ConfigError("container kind must be a non-empty word, got '" +
                          kind_ + "'");
    }
    if (version_ < 1) {
        throw ConfigError("container version must be >= 1");
    }
}

void Container::set(const std::string& key, const std::string& value) {
    if (key.empty() || key.find('\t') != std::string::npos ||
        key.find('\n') != std::string::npos) {
        throw ConfigError("container field key may not be empty or contain "
                          "tabs or newlines");
    }
    if (value.find('\n') != std::string::npos) {
        throw ConfigError("container field value may not contain newlines");
    }
    fields_.emplace_back(key, value);
}

void Container::set_int(const std::string& key, long long value) {
    set(key, std::to_string(value));
}

void Container::set_double(const std::string& key, double value) {
    set(key, format_double(value));
}

const std::string& Container::get(const std::string& key) const {
    const std::string* found = nullptr;
    for (const auto& [k, v] : fields_) {
        if (k == key) {
            if (found != nullptr) {
                throw CheckpointError("container field '" + key +
                                      "' occurs more than once");
            }
            found = &v;
        }
    }
    if (found == nullptr) {
        throw CheckpointError("container field '" + key + "' is missing");
    }
    return *found;
}

long long Container::get_int(const std::string& key) const {
    const std::string& text = get(key);
    try {
        std::size_t pos = 0;
        const long long value = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument{text};
        return value;
    } catch (const std::exception&) {
        throw CheckpointError("container field '" + key +
                              "' is not an integer: '" + text + "'");
    }
}

double Container::get_double(const std::string& key) const {
    const std::string& text = get(key);
    try {
        std::size_t pos = 0;
        const double value = std::stod(text, &pos);
        if (pos != text.size()) throw std::invalid_argument{text};
        return value;
    } catch (const std::exception&) {
        throw CheckpointError("container field '" + key +
                              "' is not a number: '" + text + "'");
    }
}

std::vector<std::string> Container::get_all(const std::string& key) const {
    std::vector<std::string> values;
    for (const auto& [k, v] : fields_) {
        if (k == key) values.push_back(v);
    }
    return values;
}

bool Container::has(const std::string& key) const {
    for (const auto& [k, v] : fields_) {
        if (k == key) return true;
    }
    return false;
}

void Container::add_array(const std::string& name, const Tensor& tensor) {
    if (name.empty() || has_whitespace(name)) {
        throw ConfigError("container array name must be a non-empty word, "
                          "got '" + name + "'");
    }
    if (has_array(name)) {
        throw ConfigError("container already holds an array named '" + name +
                          "'");
    }
    constexpr double limit = std::numeric_limits<float>::max();
    for (std::int64_t i = 0; i < tensor.size(); ++i) {
        const double v = tensor[i];
        if (std::isfinite(v) && std::abs(v) > limit) {
            throw NumericError("array '" + name +
                               "' holds a value outside float32 range");
        }
    }
    order_.push_back(name);
    arrays_.emplace_back(name, tensor);
}

const Tensor& Container::array(const std::string& name) const {
    for (const auto& [n, t] : arrays_) {
        if (n == name) return t;
    }
    throw CheckpointError("container has no array named '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
    for (const auto& [n, t] : arrays_) {
        if (n == name) return true;
    }
    return false;
}

void Container::save(std::ostream& out) const {
    out << magic << ' ' << version_ << ' ' << kind_ << '\n';
    for (const auto& [key, value] : fields_) {
        out << "field " << key << '\t' << value << '\n';
    }
    for (const auto& [name, tensor] : arrays_) {
        out << "array " << name << ' ' << tensor.rank();
        for (const int dim : tensor.shape()) {
            out << ' ' << dim;
        }
        out << '\n';
    }
    out << "data\n";
    for (const auto& [name, tensor] : arrays_) {
        for (std::int64_t i = 0; i < tensor.size(); ++i) {
            write_f32_le(out, static_cast<float>(tensor[i]));
        }
    }
    if (!out) {
        throw CheckpointError("container: write failed");
    }
}

void Container::save_file(const std::string& path) const {
    std::ofstream out{path, std::ios::binary};
    if (!out) {
        throw CheckpointError("cannot open '" + path + "' for writing");
    }
    save(out);
}

Container Container::load(std::istream& in, const std::string& expect_kind) {
    std::string line;
    if (!std::getline(in, line)) {
        throw CheckpointError("container: empty input");
    }
    std::istringstream head{line};
    std::string word;
    int version = 0;
    std::string kind;
    if (!(head >> word >> version >> kind) || word != magic) {
        throw CheckpointError("container: bad magic line '" + line + "'");
    }
    if (kind != expect_kind) {
        throw CheckpointError("expected container kind '" + expect_kind +
                              "', found '" + kind + "'");
    }
    Container container = [&] {
        try {
            return Container{kind, version};
        } catch (const ConfigError& e) {
            throw CheckpointError(std::string{"container: "} + e.what());
        }
    }();

    struct PendingArray {
        std::string name;
        Shape shape;
    };
    std::vector<PendingArray> pending;
    bool saw_data = false;
    while (std::getline(in, line)) {
        if (line == "data") {
            saw_data = true;
            break;
        }
        if (line.rfind("field ", 0) == 0) {
            const std::string rest = line.substr(6);
            const std::size_t tab = rest.find('\t');
            if (tab == std::string::npos) {
                throw CheckpointError("container: field line without tab: '" +
                                      line + "'");
            }
            try {
                container.set(rest.substr(0, tab), rest.substr(tab + 1));
            } catch (const ConfigError& e) {
                throw CheckpointError(std::string{"container: "} + e.what());
            }
        } else if (line.rfind("array ", 0) == 0) {
            std::istringstream spec{line.substr(6)};
            PendingArray entry;
            int rank = -1;
            if (!(spec >> entry.name >> rank) || rank < 0) {
                throw CheckpointError("container: bad array line '" + line +
                                      "'");
            }
            for (int i = 0; i < rank; ++i) {
                int dim = 0;
                if (!(spec >> dim) || dim <= 0) {
                    throw CheckpointError("container: bad array line '" +
                                          line + "'");
                }
                entry.shape.push_back(dim);
            }
            std::string extra;
            if (spec >> extra) {
                throw CheckpointError("container: bad array line '" + line +
                                      "'");
            }
            pending.push_back(std::move(entry));
        } else {
            throw CheckpointError("container: unexpected header line '" +
                                  line + "'");
        }
    }
    if (!saw_data) {
        throw CheckpointError("container: missing data section");
    }
    for (const PendingArray& entry : pending) {
        Tensor tensor = Tensor::zeros(entry.shape);
        for (std::int64_t i = 0; i < tensor.size(); ++i) {
            tensor[i] = static_cast<double>(read_f32_le(in));
        }
        try {
            container.add_array(entry.name, tensor);
        } catch (const ConfigError& e) {
            throw CheckpointError(std::string{"container: "} + e.what());
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError("container: trailing bytes after array payload");
    }
    return container;
}

Container Container::load_file(const std::string& path,
                               const std::string& expect_kind) {
    std::ifstream in{path, std::ios::binary};
    if (!in) {
        throw CheckpointError("cannot open '" + path + "' for reading");
    }
    return load(in, expect_kind);
}

} // namespace keytag
