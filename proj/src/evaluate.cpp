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

#include "keytag/evaluate.hpp"

#include "keytag/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace keytag {

namespace {

constexpr int k_outside = static_cast<int>(Bio::outside);
constexpr int k_begin = static_cast<int>(Bio::begin);
constexpr int k_inside = static_cast<int>(Bio::inside);

void check_tags(const std::vector<int>& ki_tags) {
    for (int tag : ki_tags) {
        if (tag != k_outside && tag != k_begin && tag != k_inside) {
            throw DataError("evaluate: KI tag value " + std::to_string(tag) +
                            " is outside the BIO range");
        }
    }
}

} // namespace

std::vector<std::pair<int, int>> decode_spans(
    const std::vector<int>& ki_tags) {
    check_tags(ki_tags);
    std::vector<std::pair<int, int>> spans;
    const int n = static_cast<int>(ki_tags.size());
    int i = 0;
    while (i < n) {
        if (ki_tags[static_cast<std::size_t>(i)] == k_outside) {
            ++i;
            continue;
        }
        // B always opens; an I opens here too (lenient), because any run
        // reaching this point starts after O, a span end, or position 0.
        const int start = i;
        ++i;
        while (i < n && ki_tags[static_cast<std::size_t>(i)] == k_inside) {
            ++i;
        }
        spans.emplace_back(start, i);
    }
    return spans;
}

std::vector<int> spans_to_bio(const std::vector<std::pair<int, int>>& spans,
                              int length) {
    std::vector<int> tags(static_cast<std::size_t>(length), k_outside);
    for (const auto& [start, end] : spans) {
        if (start < 0 || start >= end || end > length) {
            throw DataError("spans_to_bio: span [" + std::to_string(start) +
                            ", " + std::to_string(end) +
                            ") is outside a length-" + std::to_string(length) +
                            " document");
        }
        for (int i = start; i < end; ++i) {
            if (tags[static_cast<std::size_t>(i)] != k_outside) {
                throw DataError("spans_to_bio: overlapping spans at token " +
                                std::to_string(i));
            }
            tags[static_cast<std::size_t>(i)] =
                i == start ? k_begin : k_inside;
        }
    }
    return tags;
}

std::vector<TypedSpan> typed_spans(const std::vector<int>& ki_tags,
                                   const std::vector<std::string>& kc_tags) {
    if (ki_tags.size() != kc_tags.size()) {
        throw DataError("typed_spans: " + std::to_string(ki_tags.size()) +
                        " KI tags vs " + std::to_string(kc_tags.size()) +
                        " KC tags");
    }
    std::vector<TypedSpan> result;
    for (const auto& [start, end] : decode_spans(ki_tags)) {
        std::map<std::string, int> votes;
        for (int i = start; i < end; ++i) {
            const std::string& label = kc_tags[static_cast<std::size_t>(i)];
            if (label != "O") {
                votes[label] += 1;
            }
        }
        // std::map iterates in lexicographic order, so the first maximal
        // entry is the tie-break winner.
        std::string type = unknown_type;
        int best = 0;
        for (const auto& [label, count] : votes) {
            if (count > best) {
                best = count;
                type = label;
            }
        }
        result.push_back({start, end, type});
    }
    return result;
}

std::vector<Span> ki_spans(const std::string& doc_id,
                           const std::vector<int>& ki_tags) {
    std::vector<Span> spans;
    for (const auto& [start, end] : decode_spans(ki_tags)) {
        spans.push_back({doc_id, start, end, std::string()});
    }
    return spans;
}

std::vector<Span> kic_spans(const std::string& doc_id,
                            const std::vector<int>& ki_tags,
                            const std::vector<std::string>& kc_tags) {
    std::vector<Span> spans;
    for (const TypedSpan& span : typed_spans(ki_tags, kc_tags)) {
        spans.push_back({doc_id, span.start, span.end, span.type});
    }
    return spans;
}

PrfResult exact_match_f1(const std::vector<Span>& predicted,
                         const std::vector<Span>& gold) {
    // Sorted-unique walk; the test oracle counts via std::set intersection
    // instead.
    std::vector<Span> p = predicted;
    std::vector<Span> g = gold;
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    std::sort(g.begin(), g.end());
    g.erase(std::unique(g.begin(), g.end()), g.end());

    long long tp = 0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < p.size() && j < g.size()) {
        if (p[i] == g[j]) {
            ++tp;
            ++i;
            ++j;
        } else if (p[i] < g[j]) {
            ++i;
        } else {
            ++j;
        }
    }

    PrfResult out;
    out.true_positives = tp;
    out.n_predicted = static_cast<long long>(p.size());
    out.n_gold = static_cast<long long>(g.size());
    out.precision = p.empty() ? (g.empty() ? 1.0 : 0.0)
                              : static_cast<double>(tp) /
                                    static_cast<double>(p.size());
    out.recall = g.empty() ? (p.empty() ? 1.0 : 0.0)
                           : static_cast<double>(tp) /
                                 static_cast<double>(g.size());
    out.f1 = out.precision + out.recall > 0.0
                 ? 2.0 * out.precision * out.recall /
                       (out.precision + out.recall)
                 : 0.0;
    return out;
}

EvalResult evaluate_predictions(const std::vector<TaggedDocument>& gold_docs,
                                const Prediction& pred,
                                const KcLabelMap& kc_map) {
    if (pred.ki.size() != gold_docs.size() ||
        pred.kc.size() != gold_docs.size()) {
        throw DataError("evaluate: " + std::to_string(gold_docs.size()) +
                        " gold documents vs " +
                        std::to_string(pred.ki.size()) + " predictions");
    }
    std::vector<Span> pred_ki;
    std::vector<Span> pred_kic;
    std::vector<Span> gold_ki;
    std::vector<Span> gold_kic;
    for (std::size_t d = 0; d < gold_docs.size(); ++d) {
        const TaggedDocument& doc = gold_docs[d];
        if (pred.ki[d].size() != doc.length() ||
            pred.kc[d].size() != doc.length()) {
            throw DataError("evaluate: prediction length mismatch for '" +
                            doc.doc_id + "'");
        }
        std::vector<int> gold_tags;
        gold_tags.reserve(doc.length());
        for (Bio tag : doc.ki_tags) {
            gold_tags.push_back(static_cast<int>(tag));
        }
        std::vector<std::string> pred_types;
        pred_types.reserve(doc.length());
        for (int id : pred.kc[d]) {
            pred_types.push_back(kc_map.name(id));
        }
        auto append = [](std::vector<Span>& sink, std::vector<Span> spans) {
            for (Span& span : spans) sink.push_back(std::move(span));
        };
        append(pred_ki, ki_spans(doc.doc_id, pred.ki[d]));
        append(pred_kic, kic_spans(doc.doc_id, pred.ki[d], pred_types));
        append(gold_ki, ki_spans(doc.doc_id, gold_tags));
        append(gold_kic, kic_spans(doc.doc_id, gold_tags, doc.kc_tags));
    }

    EvalResult result;
    result.n_documents = static_cast<long long>(gold_docs.size());
    result.ki = exact_match_f1(pred_ki, gold_ki);
    result.kic = exact_match_f1(pred_kic, gold_kic);

    std::set<std::string> types;
    for (const Span& span : pred_kic) types.insert(span.type);
    for (const Span& span : gold_kic) types.insert(span.type);
    for (const std::string& type : types) {
        auto filter = [&type](const std::vector<Span>& spans) {
            std::vector<Span> kept;
            for (const Span& span : spans) {
                if (span.type == type) kept.push_back(span);
            }
            return kept;
        };
        result.per_type[type] =
            exact_match_f1(filter(pred_kic), filter(gold_kic));
    }
    return result;
}

namespace {

std::string prf_cells(const PrfResult& prf) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "P %.4f  R %.4f  F1 %.4f",
                  prf.precision, prf.recall, prf.f1);
    return buffer;
}

} // namespace

std::string format_report(const EvalResult& result) {
    std::string out;
    out += "documents: " + std::to_string(result.n_documents) + "\n";
    out += "KI   " + prf_cells(result.ki) + "\n";
    out += "KIC  " + prf_cells(result.kic) + "\n";
    if (!result.per_type.empty()) {
        out += "per type:\n";
        std::size_t width = 0;
        for (const auto& [type, prf] : result.per_type) {
            width = std::max(width, type.size());
        }
        for (const auto& [type, prf] : result.per_type) {
            out += "  " + type + std::string(width - type.size(), ' ') +
                   "  " + prf_cells(prf) + "\n";
        }
    }
    return out;
}

std::string format_report_tsv(const EvalResult& result) {
    auto row = [](const std::string& name, const PrfResult& prf) {
        char buffer[160];
        std::snprintf(buffer, sizeof(buffer),
                      "%s\t%.4f\t%.4f\t%.4f\t%lld\t%lld\t%lld\n",
                      name.c_str(), prf.precision, prf.recall, prf.f1,
                      prf.true_positives, prf.n_predicted, prf.n_gold);
        return std::string(buffer);
    };
    std::string out = row("KI", result.ki) + row("KIC", result.kic);
    for (const auto& [type, prf] : result.per_type) {
        out += row("type:" + type, prf);
    }
    return out;
}

} // namespace keytag
