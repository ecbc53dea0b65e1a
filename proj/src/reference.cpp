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

#include "keytag/reference.hpp"

#include "keytag/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace keytag::reference {

std::vector<double> symmetric_eigenvalues(RowMajorMatrix a) {
    if (a.rows() != a.cols() || a.rows() == 0) {
        throw NumericError("symmetric_eigenvalues: matrix must be square and "
                           "non-empty");
    }
    const int n = static_cast<int>(a.rows());
    const double scale = 1.0 + a.cwiseAbs().maxCoeff();

    for (int sweep = 0; sweep < 200; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                off += a(p, q) * a(p, q);
            }
        }
        if (off < 1e-28 * scale * scale) {
            break;
        }
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < 1e-300) {
                    continue;
                }
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t =
                    (theta >= 0.0 ? 1.0 : -1.0) /
                    (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = c * a(k, p) - s * a(k, q);
                    const double akq = s * a(k, p) + c * a(k, q);
                    a(k, p) = akp;
                    a(p, k) = akp;
                    a(k, q) = akq;
                    a(q, k) = akq;
                }
                const double app = a(p, p);
                const double aqq = a(q, q);
                a(p, p) = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a(q, q) = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
            }
        }
    }

    std::vector<double> values(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        values[static_cast<std::size_t>(i)] = a(i, i);
    }
    std::sort(values.begin(), values.end(), std::greater<double>{});
    return values;
}

CrfEnumeration enumerate_crf(const RowMajorMatrix& emissions,
                             const RowMajorMatrix& transitions,
                             const std::vector<double>& start_scores,
                             const std::vector<double>& end_scores) {
    const int len = static_cast<int>(emissions.rows());
    const int n_tags = static_cast<int>(emissions.cols());
    if (len < 1) {
        throw NumericError("enumerate_crf: need at least one position");
    }
    if (transitions.rows() != n_tags || transitions.cols() != n_tags ||
        static_cast<int>(start_scores.size()) != n_tags ||
        static_cast<int>(end_scores.size()) != n_tags) {
        throw NumericError("enumerate_crf: inconsistent tag counts");
    }

    // Right-to-left lexicographic order so the winner is what backtracking
    // from the last position with smaller-index preference would produce.
    const auto beats = [len](const std::vector<int>& a,
                             const std::vector<int>& b) {
        for (int t = len - 1; t >= 0; --t) {
            const std::size_t i = static_cast<std::size_t>(t);
            if (a[i] != b[i]) return a[i] < b[i];
        }
        return false;
    };

    std::vector<int> path(static_cast<std::size_t>(len), 0);
    std::vector<double> scores;
    CrfEnumeration result;
    bool have_best = false;
    while (true) {
        double score = start_scores[static_cast<std::size_t>(path[0])] +
                       emissions(0, path[0]);
        for (int t = 1; t < len; ++t) {
            const std::size_t i = static_cast<std::size_t>(t);
            score += transitions(path[i - 1], path[i]) + emissions(t, path[i]);
        }
        score += end_scores[static_cast<std::size_t>(path.back())];
        scores.push_back(score);

        if (!have_best || score > result.best_score ||
            (score == result.best_score && beats(path, result.best_path))) {
            result.best_score = score;
            result.best_path = path;
            have_best = true;
        }

        int t = len - 1;
        while (t >= 0 && path[static_cast<std::size_t>(t)] == n_tags - 1) {
            path[static_cast<std::size_t>(t)] = 0;
            --t;
        }
        if (t < 0) break;
        ++path[static_cast<std::size_t>(t)];
    }

    const double peak = *std::max_element(scores.begin(), scores.end());
    double accumulator = 0.0;
    for (const double s : scores) {
        accumulator += std::exp(s - peak);
    }
    result.log_partition = peak + std::log(accumulator);
    return result;
}

PrfTriple set_f1(const std::vector<std::array<int, 4>>& predicted,
                 const std::vector<std::array<int, 4>>& gold) {
    const std::set<std::array<int, 4>> pred_set{predicted.begin(),
                                                predicted.end()};
    const std::set<std::array<int, 4>> gold_set{gold.begin(), gold.end()};
    std::vector<std::array<int, 4>> both;
    std::set_intersection(pred_set.begin(), pred_set.end(), gold_set.begin(),
                          gold_set.end(), std::back_inserter(both));
    const double tp = static_cast<double>(both.size());

    PrfTriple out;
    if (pred_set.empty()) {
        out.precision = gold_set.empty() ? 1.0 : 0.0;
    } else {
        out.precision = tp / static_cast<double>(pred_set.size());
    }
    if (gold_set.empty()) {
        out.recall = pred_set.empty() ? 1.0 : 0.0;
    } else {
        out.recall = tp / static_cast<double>(gold_set.size());
    }
    const double denom = out.precision + out.recall;
    out.f1 = denom > 0.0 ? 2.0 * out.precision * out.recall / denom : 0.0;
    return out;
}

} // namespace keytag::reference
