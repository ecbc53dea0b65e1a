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
#include "keytag/reference.hpp"
#include "keytag/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <array>
#include <string>
#include <vector>

using namespace keytag;

namespace {

constexpr int O = static_cast<int>(Bio::outside);
constexpr int B = static_cast<int>(Bio::begin);
constexpr int I = static_cast<int>(Bio::inside);

// Random strict-BIO sequence: every I follows a B or an I.
std::vector<int> random_strict_bio(Rng& rng, int length) {
    std::vector<int> tags;
    bool in_span = false;
    for (int i = 0; i < length; ++i) {
        const int draw = rng.uniform_int(in_span ? 3 : 2);
        if (draw == 0) {
            tags.push_back(O);
            in_span = false;
        } else if (draw == 1) {
            tags.push_back(B);
            in_span = true;
        } else {
            tags.push_back(I);
        }
    }
    return tags;
}

// Random span set in both the production and the oracle representation.
// Integer doc and type ids keep the two views trivially alignable.
struct SpanSample {
    std::vector<Span> production;
    std::vector<std::array<int, 4>> oracle;
};

SpanSample random_spans(Rng& rng, int count, bool typed) {
    SpanSample sample;
    for (int s = 0; s < count; ++s) {
        const int doc = rng.uniform_int(4);
        const int start = rng.uniform_int(8);
        const int end = start + 1 + rng.uniform_int(3);
        const int type = typed ? rng.uniform_int(3) : 0;
        sample.production.push_back(
            {"doc" + std::to_string(doc), start, end,
             typed ? "type" + std::to_string(type) : std::string()});
        sample.oracle.push_back({doc, start, end, type});
    }
    return sample;
}

} // namespace

TEST_SUITE("evaluation") {

TEST_CASE("decode_spans follows the lenient BIO rules") {
    CHECK(decode_spans({B, I, O, B}) ==
          std::vector<std::pair<int, int>>{{0, 2}, {3, 4}});
    CHECK(decode_spans({O, O, O}).empty());
    CHECK(decode_spans({I, I, O}) ==
          std::vector<std::pair<int, int>>{{0, 2}});
    CHECK(decode_spans({B, B}) ==
          std::vector<std::pair<int, int>>{{0, 1}, {1, 2}});
    CHECK(decode_spans({O, I, I}) ==
          std::vector<std::pair<int, int>>{{1, 3}});
    CHECK(decode_spans({B, I, B, I}) ==
          std::vector<std::pair<int, int>>{{0, 2}, {2, 4}});
    CHECK(decode_spans({}).empty());
    CHECK_THROWS_AS(decode_spans({0, 3}), DataError);
}

TEST_CASE("decode then re-encode is identity on strict BIO") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
        const int length = 1 + rng.uniform_int(12);
        std::vector<int> tags = random_strict_bio(rng, length);
        CHECK(spans_to_bio(decode_spans(tags), length) == tags);
    }
    CHECK(spans_to_bio({{1, 3}}, 4) == std::vector<int>{O, B, I, O});
    CHECK_THROWS_AS(spans_to_bio({{0, 2}, {1, 3}}, 4), DataError);
    CHECK_THROWS_AS(spans_to_bio({{2, 2}}, 4), DataError);
    CHECK_THROWS_AS(spans_to_bio({{2, 5}}, 4), DataError);
}

TEST_CASE("typed_spans votes over KC labels") {
    CHECK(typed_spans({B, I}, {"Process", "Process"}) ==
          std::vector<TypedSpan>{{0, 2, "Process"}});
    CHECK(typed_spans({B, I, I}, {"Task", "Material", "Material"}) ==
          std::vector<TypedSpan>{{0, 3, "Material"}});
    CHECK(typed_spans({B}, {"O"}) ==
          std::vector<TypedSpan>{{0, 1, unknown_type}});
    // One vote each: the lexicographically smaller type wins the tie.
    CHECK(typed_spans({B, I}, {"Task", "Material"}) ==
          std::vector<TypedSpan>{{0, 2, "Material"}});
    // O labels cast no vote even when they dominate.
    CHECK(typed_spans({B, I, I}, {"O", "O", "Task"}) ==
          std::vector<TypedSpan>{{0, 3, "Task"}});
    // Spans vote independently.
    CHECK(typed_spans({B, O, B}, {"Task", "O", "Process"}) ==
          std::vector<TypedSpan>{{0, 1, "Task"}, {2, 3, "Process"}});
    CHECK_THROWS_AS(typed_spans({B, I}, {"Task"}), DataError);
}

TEST_CASE("exact_match_f1 handles the stated conventions") {
    const std::vector<Span> gold = {{"d", 0, 2, ""}, {"d", 3, 4, ""}};
    const std::vector<Span> pred = {{"d", 0, 2, ""}, {"d", 2, 4, ""}};
    PrfResult prf = exact_match_f1(pred, gold);
    CHECK(prf.true_positives == 1);
    CHECK(prf.precision == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(prf.recall == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(prf.f1 == doctest::Approx(0.5).epsilon(1e-15));

    PrfResult perfect = exact_match_f1(gold, gold);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.recall == 1.0);
    CHECK(perfect.f1 == 1.0);

    PrfResult both_empty = exact_match_f1({}, {});
    CHECK(both_empty.precision == 1.0);
    CHECK(both_empty.recall == 1.0);
    CHECK(both_empty.f1 == 1.0);

    PrfResult none_found = exact_match_f1({}, gold);
    CHECK(none_found.precision == 0.0);
    CHECK(none_found.recall == 0.0);
    CHECK(none_found.f1 == 0.0);

    PrfResult spurious = exact_match_f1(pred, {});
    CHECK(spurious.precision == 0.0);
    CHECK(spurious.recall == 0.0);
    CHECK(spurious.f1 == 0.0);

    // Duplicates collapse before counting.
    PrfResult duped =
        exact_match_f1({{"d", 0, 2, ""}, {"d", 0, 2, ""}}, gold);
    CHECK(duped.n_predicted == 1);
    CHECK(duped.precision == 1.0);
    CHECK(duped.recall == doctest::Approx(0.5).epsilon(1e-15));

    // Same offsets in another document never match.
    PrfResult other_doc = exact_match_f1({{"e", 0, 2, ""}}, {{"d", 0, 2, ""}});
    CHECK(other_doc.true_positives == 0);

    // Same span, different type: KI would match, KIC must not.
    PrfResult typed_miss =
        exact_match_f1({{"d", 0, 2, "Task"}}, {{"d", 0, 2, "Process"}});
    CHECK(typed_miss.true_positives == 0);
}

TEST_CASE("exact_match_f1 agrees with the set-intersection oracle") {
    Rng rng(113);
    for (int trial = 0; trial < 200; ++trial) {
        const bool typed = rng.uniform_int(2) == 1;
        SpanSample pred = random_spans(rng, rng.uniform_int(12), typed);
        SpanSample gold = random_spans(rng, rng.uniform_int(12), typed);
        PrfResult mine = exact_match_f1(pred.production, gold.production);
        reference::PrfTriple oracle =
            reference::set_f1(pred.oracle, gold.oracle);
        CHECK(mine.precision == doctest::Approx(oracle.precision).epsilon(1e-12));
        CHECK(mine.recall == doctest::Approx(oracle.recall).epsilon(1e-12));
        CHECK(mine.f1 == doctest::Approx(oracle.f1).epsilon(1e-12));
    }
}

TEST_CASE("typed matching never beats untyped on the same predictions") {
    Rng rng(131);
    const std::vector<std::string> inventory = {"Material", "Process",
                                                "Task"};
    for (int trial = 0; trial < 60; ++trial) {
        std::vector<Span> pred_ki_set;
        std::vector<Span> pred_kic_set;
        std::vector<Span> gold_ki_set;
        std::vector<Span> gold_kic_set;
        const int docs = 1 + rng.uniform_int(3);
        for (int d = 0; d < docs; ++d) {
            const std::string doc_id = "doc" + std::to_string(d);
            const int length = 1 + rng.uniform_int(10);
            auto random_types = [&](const std::vector<int>& tags) {
                std::vector<std::string> types;
                for (int tag : tags) {
                    if (tag == O && rng.uniform_int(2) == 0) {
                        types.push_back("O");
                    } else {
                        types.push_back(inventory[static_cast<std::size_t>(
                            rng.uniform_int(3))]);
                    }
                }
                return types;
            };
            std::vector<int> pred_tags = random_strict_bio(rng, length);
            std::vector<int> gold_tags = random_strict_bio(rng, length);
            std::vector<std::string> pred_types = random_types(pred_tags);
            std::vector<std::string> gold_types = random_types(gold_tags);
            for (Span& s : ki_spans(doc_id, pred_tags))
                pred_ki_set.push_back(std::move(s));
            for (Span& s : kic_spans(doc_id, pred_tags, pred_types))
                pred_kic_set.push_back(std::move(s));
            for (Span& s : ki_spans(doc_id, gold_tags))
                gold_ki_set.push_back(std::move(s));
            for (Span& s : kic_spans(doc_id, gold_tags, gold_types))
                gold_kic_set.push_back(std::move(s));
        }
        PrfResult ki = exact_match_f1(pred_ki_set, gold_ki_set);
        PrfResult kic = exact_match_f1(pred_kic_set, gold_kic_set);
        CHECK(kic.f1 <= ki.f1 + 1e-12);
        for (const PrfResult& prf : {ki, kic}) {
            CHECK(prf.precision >= 0.0);
            CHECK(prf.precision <= 1.0);
            CHECK(prf.recall >= 0.0);
            CHECK(prf.recall <= 1.0);
            CHECK(prf.f1 >= 0.0);
            CHECK(prf.f1 <= 1.0);
            if (prf.n_predicted + prf.n_gold > 0) {
                CHECK((prf.f1 == 0.0) == (prf.true_positives == 0));
            }
        }

        // Permutation invariance.
        Rng shuffler(7);
        std::vector<Span> shuffled = pred_ki_set;
        shuffler.shuffle(shuffled);
        PrfResult again = exact_match_f1(shuffled, gold_ki_set);
        CHECK(again.precision == ki.precision);
        CHECK(again.recall == ki.recall);
        CHECK(again.f1 == ki.f1);
    }
}

TEST_CASE("evaluate_predictions scores a corpus end to end") {
    std::vector<TaggedDocument> gold;
    TaggedDocument a;
    a.doc_id = "a";
    a.tokens = {"graph", "neural", "net", "solves", "tasks"};
    a.ki_tags = {Bio::begin, Bio::inside, Bio::inside, Bio::outside,
                 Bio::begin};
    a.kc_tags = {"Process", "Process", "Process", "O", "Task"};
    gold.push_back(a);
    TaggedDocument b;
    b.doc_id = "b";
    b.tokens = {"measure", "entropy"};
    b.ki_tags = {Bio::outside, Bio::begin};
    b.kc_tags = {"O", "Material"};
    gold.push_back(b);

    KcLabelMap kc_map({"Material", "Process", "Task"});
    Prediction pred;
    // Document a: span (0,3) right, typed right; span (4,5) right but typed
    // wrong. Document b: no spans predicted.
    pred.ki = {{B, I, I, O, B}, {O, O}};
    pred.kc = {{kc_map.id("Process"), kc_map.id("Process"),
                kc_map.id("Process"), kc_map.id("O"), kc_map.id("Material")},
               {kc_map.id("O"), kc_map.id("O")}};

    EvalResult result = evaluate_predictions(gold, pred, kc_map);
    CHECK(result.n_documents == 2);
    // KI: predicted {a(0,3), a(4,5)}, gold {a(0,3), a(4,5), b(1,2)}.
    CHECK(result.ki.true_positives == 2);
    CHECK(result.ki.precision == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(result.ki.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    // KIC: the mistyped (4,5) span no longer matches.
    CHECK(result.kic.true_positives == 1);
    CHECK(result.kic.precision == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(result.kic.recall == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(result.kic.f1 <= result.ki.f1);

    REQUIRE(result.per_type.count("Process") == 1);
    REQUIRE(result.per_type.count("Task") == 1);
    REQUIRE(result.per_type.count("Material") == 1);
    CHECK(result.per_type.at("Process").f1 == 1.0);
    CHECK(result.per_type.at("Task").true_positives == 0);
    CHECK(result.per_type.at("Material").true_positives == 0);

    Prediction bad = pred;
    bad.ki[1] = {O};
    CHECK_THROWS_AS(evaluate_predictions(gold, bad, kc_map), DataError);
    bad.ki.pop_back();
    bad.kc.pop_back();
    CHECK_THROWS_AS(evaluate_predictions(gold, bad, kc_map), DataError);

    const std::string report = format_report(result);
    CHECK(report.find("KI   P 1.0000  R 0.6667  F1 0.8000") !=
          std::string::npos);
    CHECK(report.find("KIC  P 0.5000") != std::string::npos);
    CHECK(report.find("Process") != std::string::npos);
    CHECK(format_report(result) == report);

    const std::string tsv = format_report_tsv(result);
    CHECK(tsv.find("KI\t1.0000\t0.6667\t0.8000\t2\t2\t3\n") !=
          std::string::npos);
    CHECK(tsv.find("type:Process\t") != std::string::npos);
    CHECK(format_report_tsv(result) == tsv);
}

} // TEST_SUITE
