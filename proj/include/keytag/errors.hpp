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

#ifndef KEYTAG_ERRORS_HPP
#define KEYTAG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace keytag {

// Error categories map one-to-one onto the CLI exit codes; every throw site
// picks the category that describes what went wrong, and main() translates.

/// Malformed or inconsistent input data (corpus, embeddings, domains files).
class DataError : public std::runtime_error {
  public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration: unknown keys, out-of-range values, missing paths.
class ConfigError : public std::runtime_error {
  public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric failure: shape mismatches, non-finite intermediates, aborted steps.
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Checkpoint cannot be reconciled with the requested configuration.
class CheckpointError : public std::runtime_error {
  public:
    explicit CheckpointError(const std::string& what)
      : std::runtime_error(what) {}
};

namespace exit_code {
constexpr int ok = 0;
constexpr int verification_failure = 1;
constexpr int data_error = 2;
constexpr int config_error = 3;
constexpr int numeric_error = 4;
constexpr int checkpoint_mismatch = 5;
} // namespace exit_code

} // namespace keytag

#endif // KEYTAG_ERRORS_HPP
