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

#ifndef KEYTAG_REFERENCE_HPP
#define KEYTAG_REFERENCE_HPP

#include "keytag/tensor.hpp"

#include <array>
#include <vector>

// Slow, self-contained reference computations used to cross-check the
// production paths. Everything here trades speed for obviousness and shares
// no code with the implementations it checks.
namespace keytag::reference {

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// descending order. Intended for matrices up to a few dozen rows.
std::vector<double> symmetric_eigenvalues(RowMajorMatrix a);

struct CrfEnumeration {
    double log_partition = 0.0;
    double best_score = 0.0;
    std::vector<int> best_path;
};

/// Scores every one of the n_tags^len tag paths explicitly. The best path
/// breaks score ties by preferring the smaller tag at the last position,
/// then the second-to-last, and so on (the order Viterbi backtracking
/// resolves them in).
CrfEnumeration enumerate_crf(const RowMajorMatrix& emissions,
                             const RowMajorMatrix& transitions,
                             const std::vector<double>& start_scores,
                             const std::vector<double>& end_scores);

struct PrfTriple {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// Micro F1 over span tuples (doc, begin, end, type) via std::set
/// intersection. Conventions: both sides empty scores (1,1,1); F1 is 0
/// whenever precision + recall is 0.
PrfTriple set_f1(const std::vector<std::array<int, 4>>& predicted,
                 const std::vector<std::array<int, 4>>& gold);

} // namespace keytag::reference

#endif // KEYTAG_REFERENCE_HPP
