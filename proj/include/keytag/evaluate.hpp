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

#ifndef KEYTAG_EVALUATE_HPP
#define KEYTAG_EVALUATE_HPP

#include "keytag/corpus.hpp"
#include "keytag/model.hpp"

#include <compare>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace keytag {

/// Spans whose vote over the KC head is all-O get this type.
inline const std::string unknown_type = "Unknown";

/// Half-open token span. type stays empty for untyped (KI) matching.
struct Span {
    std::string doc_id;
    int start = 0;
    int end = 0;
    std::string type;

    auto operator<=>(const Span&) const = default;
};

/// Lenient BIO decode: B opens a span, following Is extend it, and a
/// leading I (legal in predictions) opens one too. Total on any tag
/// sequence over {O,B,I}.
std::vector<std::pair<int, int>> decode_spans(const std::vector<int>& ki_tags);

/// Strict-BIO encoding of non-overlapping spans; inverse of decode_spans
/// on well-formed input.
std::vector<int> spans_to_bio(const std::vector<std::pair<int, int>>& spans,
                              int length);

struct TypedSpan {
    int start = 0;
    int end = 0;
    std::string type;

    bool operator==(const TypedSpan&) const = default;
};

/// KI spans typed by majority vote of the KC labels across the span,
/// excluding O; ties toward the lexicographically smaller type; all-O
/// spans get unknown_type.
std::vector<TypedSpan> typed_spans(const std::vector<int>& ki_tags,
                                   const std::vector<std::string>& kc_tags);

/// Span builders for one document.
std::vector<Span> ki_spans(const std::string& doc_id,
                           const std::vector<int>& ki_tags);
std::vector<Span> kic_spans(const std::string& doc_id,
                            const std::vector<int>& ki_tags,
                            const std::vector<std::string>& kc_tags);

struct PrfResult {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long true_positives = 0;
    long long n_predicted = 0;
    long long n_gold = 0;
};

/// Micro-averaged exact-match scores. Duplicates collapse; matching is on
/// full (doc_id, start, end, type) equality. Empty-set conventions:
/// both empty -> (1,1,1); one empty -> that side's score 0; f1 = 0 when
/// precision + recall = 0.
PrfResult exact_match_f1(const std::vector<Span>& predicted,
                         const std::vector<Span>& gold);

struct EvalResult {
    PrfResult ki;
    PrfResult kic;
    // KIC restricted to spans of one type, keyed by type name.
    std::map<std::string, PrfResult> per_type;
    long long n_documents = 0;
};

/// Scores model predictions against gold documents. pred must hold one tag
/// sequence per document with matching lengths.
EvalResult evaluate_predictions(const std::vector<TaggedDocument>& gold_docs,
                                const Prediction& pred,
                                const KcLabelMap& kc_map);

/// Human-readable block: KI and KIC rows to 4 decimals plus a per-type
/// breakdown.
std::string format_report(const EvalResult& result);

/// Machine twin: `row<TAB>precision<TAB>recall<TAB>f1<TAB>tp<TAB>pred<TAB>gold`.
std::string format_report_tsv(const EvalResult& result);

} // namespace keytag

#endif // KEYTAG_EVALUATE_HPP
