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

#ifndef KEYTAG_VERIFY_HPP
#define KEYTAG_VERIFY_HPP

#include <string>
#include <vector>

namespace keytag {

/// One property check: passed iff margin <= bound. margin is the measured
/// worst-case deviation, bound the contract it must stay under.
struct CheckResult {
    std::string name;
    bool passed = false;
    double margin = 0.0;
    double bound = 0.0;
    std::string detail; // short failure context, empty on pass
};

struct VerifyOptions {
    // Deliberate-damage hook for exercising the failure path. Supported:
    // "crf-nan" poisons the CRF transition scores before the finiteness
    // check. Unknown values raise ConfigError.
    std::string tamper;
};

/// Runs every built-in property check at small scale, in a fixed order,
/// with fixed seeds. Never throws on a failing property; the result lists
/// it as failed.
std::vector<CheckResult> run_verification(const VerifyOptions& options = {});

bool all_passed(const std::vector<CheckResult>& results);

/// "name  pass|FAIL  margin <v> bound <v>" plus the detail when present.
std::string format_check_line(const CheckResult& result);

} // namespace keytag

#endif // KEYTAG_VERIFY_HPP
