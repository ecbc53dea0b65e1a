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

#ifndef KEYTAG_SERIALIZE_HPP
#define KEYTAG_SERIALIZE_HPP

#include "keytag/tensor.hpp"

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace keytag {

/// Versioned checkpoint container: a text header holding ordered key/value
/// fields plus named arrays, followed by the array payload as little-endian
/// 32-bit floats. One format serves model and topic-model checkpoints; the
/// kind string tells them apart at load time.
///
/// Layout:
///   keytag-container <version> <kind>
///   field <key>\t<value>        (zero or more; keys may repeat)
///   array <name> <rank> <dims>  (zero or more)
///   data
///   <float32 payload, arrays in declaration order>
class Container {
  public:
    Container(std::string kind, int version);

    const std::string& kind() const { return kind_; }
    int version() const { return version_; }

    /// Appends a field. Keys may not contain tabs or newlines, values may
    /// not contain newlines; repeated keys form an ordered list.
    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, long long value);
    void set_double(const std::string& key, double value);

    /// Value of a key that occurs exactly once. CheckpointError otherwise.
    const std::string& get(const std::string& key) const;
    long long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;

    /// All values for a key, in file order. Empty when absent.
    std::vector<std::string> get_all(const std::string& key) const;
    bool has(const std::string& key) const;

    /// Adds a named array. Names must be unique, non-empty, and free of
    /// whitespace. Values must fit in a 32-bit float.
    void add_array(const std::string& name, const Tensor& tensor);
    const Tensor& array(const std::string& name) const;
    bool has_array(const std::string& name) const;
    const std::vector<std::string>& array_names() const { return order_; }

    void save(std::ostream& out) const;
    void save_file(const std::string& path) const;

    /// Parses a container, checking the kind. Any structural problem, a
    /// kind mismatch, truncation, or trailing bytes raise CheckpointError.
    static Container load(std::istream& in, const std::string& expect_kind);
    static Container load_file(const std::string& path,
                               const std::string& expect_kind);

  private:
    std::string kind_;
    int version_;
    std::vector<std::pair<std::string, std::string>> fields_;
    std::vector<std::string> order_;
    std::vector<std::pair<std::string, Tensor>> arrays_;
};

} // namespace keytag

#endif // KEYTAG_SERIALIZE_HPP
