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

#include "keytag/verify.hpp"

#include "keytag/errors.hpp"
#include "keytag/evaluate.hpp"
#include "keytag/model.hpp"
#include "keytag/reference.hpp"
#include "keytag/topics.hpp"
#include "keytag/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <initializer_list>
#include <limits>
#include <sstream>

namespace keytag {

namespace {

// --------------------------------------------------------------------------
// Shared tiny fixture.

struct Fixture {
    std::vector<TaggedDocument> docs;
    Vocabulary vocab;
    KcLabelMap kc_map{std::vector<std::string>{"Process", "Task"}};
    Model model;
    EncodedBatch batch;
};

Fixture tiny_fixture(unsigned long long seed) {
    Fixture f;
    f.docs = parse_conll(
        "neural\tB\tProcess\nnets\tI\tProcess\nhelp\tO\tO\n\n"
        "solve\tB\tTask\ntasks\tO\tO\nfast\tO\tO\n\n");
    f.vocab = build_vocab(f.docs, 1);
    EncoderConfig config;
    config.embedding_width = 3;
    config.lstm_hidden = 2;
    config.lstm_layers = 1;
    config.disc_hidden = 2;
    Rng rng{seed};
    f.model = build_model(config, f.vocab, f.kc_map, 2, rng);
    f.batch = encode_batch(doc_pointers(f.docs), f.vocab, {0, 1}, f.kc_map, 2);
    return f;
}

CheckResult make_result(const std::string& name, double margin,
                        double bound, const std::string& detail = "") {
    CheckResult result;
    result.name = name;
    result.margin = margin;
    result.bound = bound;
    result.passed = margin <= bound;
    if (!result.passed) result.detail = detail;
    return result;
}

// --------------------------------------------------------------------------
// CRF checks.

void random_crf_instance(Rng& rng, int length, int n_tags,
                         RowMajorMatrix& emissions,
                         RowMajorMatrix& transitions,
                         Eigen::VectorXd& start_scores,
                         Eigen::VectorXd& end_scores) {
    emissions.resize(length, n_tags);
    transitions.resize(n_tags, n_tags);
    start_scores.resize(n_tags);
    end_scores.resize(n_tags);
    for (int t = 0; t < length; ++t)
        for (int k = 0; k < n_tags; ++k)
            emissions(t, k) = rng.uniform(-2.0, 2.0);
    for (int a = 0; a < n_tags; ++a) {
        start_scores[a] = rng.uniform(-2.0, 2.0);
        end_scores[a] = rng.uniform(-2.0, 2.0);
        for (int b = 0; b < n_tags; ++b)
            transitions(a, b) = rng.uniform(-2.0, 2.0);
    }
}

double crf_log_partition(const RowMajorMatrix& emissions,
                         const RowMajorMatrix& transitions,
                         const Eigen::VectorXd& start_scores,
                         const Eigen::VectorXd& end_scores,
                         const std::vector<int>& gold) {
    const int length = static_cast<int>(emissions.rows());
    const int n_tags = static_cast<int>(emissions.cols());
    Tape tape;
    Tensor em({length, n_tags});
    em.as_2d() = emissions;
    Tensor tr({n_tags, n_tags});
    tr.as_2d() = transitions;
    Tensor st({n_tags});
    Tensor en({n_tags});
    for (int k = 0; k < n_tags; ++k) {
        st[k] = start_scores[k];
        en[k] = end_scores[k];
    }
    Eigen::ArrayXXi tags(1, length);
    Eigen::ArrayXXi mask(1, length);
    double gold_score = start_scores[gold.front()] + end_scores[gold.back()];
    for (int t = 0; t < length; ++t) {
        tags(0, t) = gold[t];
        mask(0, t) = 1;
        gold_score += emissions(t, gold[t]);
        if (t > 0) gold_score += transitions(gold[t - 1], gold[t]);
    }
    Var nll = crf_negative_log_likelihood(
        tape, tape.constant(std::move(em)), tape.constant(std::move(tr)),
        tape.constant(std::move(st)), tape.constant(std::move(en)), tags,
        mask);
    return tape.value(nll).scalar_value() + gold_score;
}

CheckResult check_crf_log_partition() {
    Rng rng(101);
    double margin = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const int length = 1 + rng.uniform_int(5);
        RowMajorMatrix emissions, transitions;
        Eigen::VectorXd start_scores, end_scores;
        random_crf_instance(rng, length, 3, emissions, transitions,
                            start_scores, end_scores);
        std::vector<double> st(start_scores.data(),
                               start_scores.data() + 3);
        std::vector<double> en(end_scores.data(), end_scores.data() + 3);
        reference::CrfEnumeration oracle =
            reference::enumerate_crf(emissions, transitions, st, en);
        std::vector<int> gold(length);
        for (int t = 0; t < length; ++t) gold[t] = rng.uniform_int(3);
        const double log_z = crf_log_partition(emissions, transitions,
                                               start_scores, end_scores,
                                               gold);
        margin = std::max(margin, std::abs(log_z - oracle.log_partition));
    }
    return make_result("crf_log_partition", margin, 1e-8,
                       "forward recursion disagrees with enumeration");
}

CheckResult check_crf_viterbi() {
    Rng rng(103);
    double mismatches = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const int length = 1 + rng.uniform_int(5);
        RowMajorMatrix emissions, transitions;
        Eigen::VectorXd start_scores, end_scores;
        random_crf_instance(rng, length, 3, emissions, transitions,
                            start_scores, end_scores);
        std::vector<double> st(start_scores.data(),
                               start_scores.data() + 3);
        std::vector<double> en(end_scores.data(), end_scores.data() + 3);
        reference::CrfEnumeration oracle =
            reference::enumerate_crf(emissions, transitions, st, en);
        const std::vector<int> decoded =
            crf_decode(emissions, transitions, start_scores, end_scores);
        if (decoded != oracle.best_path) mismatches += 1.0;
    }
    return make_result("crf_viterbi", mismatches, 0.0,
                       "decode disagrees with enumeration argmax");
}

CheckResult check_crf_finiteness(const std::string& tamper) {
    Fixture f = tiny_fixture(211);
    if (tamper == "crf-nan") {
        f.model.params.value("crf.transitions")[0] =
            std::numeric_limits<double>::quiet_NaN();
    }
    const double loss = forward_value(
        [&](Tape& tape, const VarMap& leaves) {
            LatentBatch latent =
                encode(tape, leaves, f.model, f.batch, false, nullptr);
            return tag_loss(tape, leaves, latent, f.batch,
                            f.model.config.hard_o_to_i);
        },
        f.model.params);
    const double margin =
        std::isfinite(loss) ? 0.0 : std::numeric_limits<double>::infinity();
    std::ostringstream detail;
    detail << "CRF loss is " << loss;
    return make_result("crf_finiteness", margin, 0.0, detail.str());
}

// --------------------------------------------------------------------------
// Gradient checks.

CheckResult check_finite_differences() {
    Fixture f = tiny_fixture(223);
    const double lambda = 0.1;
    // The reversal layer deliberately mis-reports the true derivative, so
    // the derivative check runs with it degraded to identity; the sign
    // contract has its own check below.
    const double error = finite_difference_check(
        [&](Tape& tape, const VarMap& leaves) {
            LatentBatch latent =
                encode(tape, leaves, f.model, f.batch, false, nullptr);
            Var l_tag = tag_loss(tape, leaves, latent, f.batch,
                                 f.model.config.hard_o_to_i);
            Var l_class = kc_loss(tape, leaves, latent, f.batch);
            Var l_da = domain_loss(tape, leaves, latent, f.batch,
                                   f.model.n_domains, /*reversal=*/1.0);
            return add(add(l_tag, l_class), scale(l_da, lambda));
        },
        f.model.params, 1e-5);
    return make_result("finite_differences", error, 1e-4,
                       "analytic gradient drifts from central differences");
}

CheckResult check_grl_sign() {
    Fixture f = tiny_fixture(227);
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    Var reversed = domain_loss(tape, leaves, latent, f.batch,
                               f.model.n_domains, -1.0);
    Var identity = domain_loss(tape, leaves, latent, f.batch,
                               f.model.n_domains, 1.0);
    double margin = 0.0;
    tape.backward(reversed);
    std::vector<std::pair<std::string, Tensor>> flipped;
    for (const std::string& name : f.model.params.names()) {
        if (name.rfind("dom.", 0) == 0) continue;
        flipped.emplace_back(name, tape.grad(leaves.at(name)));
    }
    tape.backward(identity);
    for (const auto& [name, grad_reversed] : flipped) {
        const Tensor grad_identity = tape.grad(leaves.at(name));
        for (std::int64_t i = 0; i < grad_reversed.size(); ++i) {
            margin = std::max(
                margin, std::abs(grad_reversed[i] + grad_identity[i]));
        }
    }
    return make_result("grl_sign", margin, 0.0,
                       "reversal is not an exact sign flip");
}

CheckResult check_fgsm_bounds() {
    Rng rng(229);
    double margin = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int rows = 1 + rng.uniform_int(4);
        const int cols = 1 + rng.uniform_int(6);
        Tensor x({rows, cols});
        Tensor g({rows, cols});
        for (std::int64_t i = 0; i < x.size(); ++i) {
            x[i] = rng.uniform(-3.0, 3.0);
            g[i] = rng.bernoulli(0.8) ? rng.uniform(-1.0, 1.0) : 0.0;
        }
        const double eps = rng.uniform(0.0, 0.5);
        Tape tape;
        LatentBatch latent;
        latent.values = tape.leaf(x);
        latent.batch = rows;
        latent.max_len = 1;
        latent.width = cols;
        const Tensor& moved =
            tape.value(fgsm_perturb(tape, latent, g, eps).values);
        const Tensor& frozen =
            tape.value(fgsm_perturb(tape, latent, g, 0.0).values);
        for (std::int64_t i = 0; i < x.size(); ++i) {
            const double delta = std::abs(moved[i] - x[i]);
            margin = std::max(margin, delta - eps);
            if (g[i] != 0.0) margin = std::max(margin, std::abs(delta - eps));
            margin = std::max(margin, std::abs(frozen[i] - x[i]));
        }
    }
    return make_result("fgsm_bounds", margin, 1e-12,
                       "perturbation leaves the epsilon ball");
}

CheckResult check_fgsm_direction() {
    Fixture f = tiny_fixture(233);
    const double lambda = 0.1;
    const double eps = 1e-4;
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    auto heads = [&](const LatentBatch& input) {
        Var l_tag = tag_loss(tape, leaves, input, f.batch,
                             f.model.config.hard_o_to_i);
        Var l_class = kc_loss(tape, leaves, input, f.batch);
        Var l_da = domain_loss(tape, leaves, input, f.batch,
                               f.model.n_domains);
        return add(add(l_tag, l_class), scale(l_da, lambda));
    };
    Var clean = heads(latent);
    const double clean_value = tape.value(clean).scalar_value();
    tape.backward(clean);
    const Tensor gradient = tape.grad(latent.values);
    Var perturbed = heads(fgsm_perturb(tape, latent, gradient, eps));
    const double perturbed_value = tape.value(perturbed).scalar_value();
    const double margin = std::max(0.0, clean_value - perturbed_value);
    return make_result("fgsm_direction", margin, 1e-6,
                       "loss fell along the gradient sign direction");
}

CheckResult check_recomposition() {
    double margin = 0.0;
    for (const double lambda : {0.0, 0.1, 1.0}) {
        Fixture f = tiny_fixture(239);
        TrainConfig config;
        config.optimizer = OptimizerKind::sgd;
        config.learning_rate = 1e-2;
        config.lambda = lambda;
        config.adversarial_enabled = true;
        config.epsilon = 0.01;
        config.seed = 7;
        Optimizer optimizer(config.optimizer, config);
        Rng rng(config.seed);
        for (int step = 0; step < 6; ++step) {
            StepReport report =
                train_step(f.model, f.batch, config, optimizer, rng, step);
            const double recomposed = total_loss(
                report.l_tag, report.l_class, report.l_da, lambda);
            margin = std::max(margin,
                              std::abs(report.l_total - recomposed));
        }
    }
    return make_result("loss_recomposition", margin, 1e-9,
                       "logged losses break l_tag + l_class + lambda*l_da");
}

// --------------------------------------------------------------------------
// Topic-model checks.

std::vector<TaggedDocument> planted_corpus() {
    const std::vector<std::string> group_a = {"alpha", "braid", "comet"};
    const std::vector<std::string> group_b = {"delta", "ember", "flint"};
    Rng rng(41);
    std::vector<TaggedDocument> docs;
    for (int d = 0; d < 6; ++d) {
        const auto& group = d % 2 == 0 ? group_a : group_b;
        TaggedDocument doc;
        doc.doc_id = "doc" + std::to_string(d);
        for (int t = 0; t < 12; ++t) {
            doc.tokens.push_back(group[rng.uniform_int(3)]);
            doc.ki_tags.push_back(Bio::outside);
            doc.kc_tags.push_back("O");
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

void check_lda(std::vector<CheckResult>& results) {
    std::vector<TaggedDocument> docs = planted_corpus();
    Vocabulary vocab = build_vocab(docs, 1);
    BowMatrix bow = build_bow(docs, vocab);
    const long long tokens = static_cast<long long>(bow.values.sum());
    double conservation = 0.0;
    int iterations_seen = 0;
    TopicModelFit fit = fit_lda(
        bow, 2, 25.0, 0.01, 50, 17, [&](const GibbsStats& stats) {
            conservation = std::max(
                conservation,
                static_cast<double>(
                    std::abs(stats.doc_topic_total - tokens)));
            conservation = std::max(
                conservation,
                static_cast<double>(
                    std::abs(stats.topic_word_total - tokens)));
            ++iterations_seen;
        });
    if (iterations_seen != 50) {
        conservation = std::numeric_limits<double>::infinity();
    }
    results.push_back(make_result("lda_conservation", conservation, 0.0,
                                  "Gibbs counts leak tokens"));
    double simplex = 0.0;
    for (Eigen::Index d = 0; d < fit.theta.rows(); ++d)
        simplex = std::max(simplex, std::abs(fit.theta.row(d).sum() - 1.0));
    for (Eigen::Index k = 0; k < fit.phi.rows(); ++k)
        simplex = std::max(simplex, std::abs(fit.phi.row(k).sum() - 1.0));
    results.push_back(make_result("lda_simplex", simplex, 1e-9,
                                  "theta/phi rows are not simplex rows"));
}

CheckResult check_nmf_monotone() {
    Rng rng(43);
    BowMatrix bow;
    bow.values.resize(6, 8);
    for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 8; ++c)
            bow.values(r, c) = rng.uniform(0.0, 3.0);
    for (int r = 0; r < 6; ++r) bow.doc_ids.push_back("d" + std::to_string(r));
    for (int c = 0; c < 8; ++c) bow.tokens.push_back("w" + std::to_string(c));
    TopicModelFit fit = fit_nmf(bow, 2, 60, 5);
    double margin = 0.0;
    for (std::size_t i = 1; i < fit.history.size(); ++i)
        margin = std::max(margin, fit.history[i] - fit.history[i - 1]);
    margin = std::max(margin, -fit.theta.minCoeff());
    margin = std::max(margin, -fit.phi.minCoeff());
    return make_result("nmf_monotone", margin, 1e-10,
                       "objective rose or a factor went negative");
}

CheckResult check_kmeans_inertia() {
    Rng rng(47);
    RowMajorMatrix points(20, 4);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 4; ++c) points(r, c) = rng.uniform(-1.0, 1.0);
    TopicModelFit fit = fit_kmeans(points, 3, 50, 11);
    double margin = 0.0;
    for (std::size_t i = 1; i < fit.history.size(); ++i)
        margin = std::max(margin, fit.history[i] - fit.history[i - 1]);
    return make_result("kmeans_inertia", margin, 1e-12,
                       "Lloyd iterations increased the inertia");
}

CheckResult check_lsa_oracle() {
    Rng rng(53);
    double margin = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const int rows = 6 + rng.uniform_int(7);
        const int cols = 4 + rng.uniform_int(7);
        BowMatrix bow;
        bow.values.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                bow.values(r, c) = rng.uniform(0.0, 2.0);
        for (int r = 0; r < rows; ++r)
            bow.doc_ids.push_back("d" + std::to_string(r));
        for (int c = 0; c < cols; ++c)
            bow.tokens.push_back("w" + std::to_string(c));
        TopicModelFit fit = fit_lsa(bow, 3);
        const RowMajorMatrix gram =
            bow.values.transpose() * bow.values;
        const std::vector<double> eigens =
            reference::symmetric_eigenvalues(gram);
        for (int k = 0; k < 3; ++k) {
            const double oracle = std::sqrt(std::max(0.0, eigens[k]));
            margin = std::max(
                margin, std::abs(fit.singular_values[k] - oracle));
        }
    }
    return make_result("lsa_oracle", margin, 1e-6,
                       "singular values drift from the Gram eigenvalues");
}

// --------------------------------------------------------------------------
// Metric checks.

std::vector<std::array<int, 4>> random_span_set(Rng& rng) {
    std::vector<std::array<int, 4>> spans;
    const int count = rng.uniform_int(6);
    for (int i = 0; i < count; ++i) {
        const int doc = rng.uniform_int(3);
        const int start = rng.uniform_int(8);
        const int end = start + 1 + rng.uniform_int(3);
        const int type = rng.uniform_int(3);
        spans.push_back({doc, start, end, type});
    }
    return spans;
}

std::vector<Span> as_spans(const std::vector<std::array<int, 4>>& tuples,
                           bool typed) {
    std::vector<Span> spans;
    for (const auto& t : tuples) {
        Span span;
        span.doc_id = "d" + std::to_string(t[0]);
        span.start = t[1];
        span.end = t[2];
        if (typed) span.type = "t" + std::to_string(t[3]);
        spans.push_back(std::move(span));
    }
    return spans;
}

CheckResult check_metric_oracle() {
    Rng rng(59);
    double margin = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto predicted = random_span_set(rng);
        const auto gold = random_span_set(rng);
        const PrfResult ours =
            exact_match_f1(as_spans(predicted, true), as_spans(gold, true));
        const reference::PrfTriple oracle =
            reference::set_f1(predicted, gold);
        margin = std::max(margin, std::abs(ours.precision - oracle.precision));
        margin = std::max(margin, std::abs(ours.recall - oracle.recall));
        margin = std::max(margin, std::abs(ours.f1 - oracle.f1));
    }
    return make_result("metric_oracle", margin, 1e-12,
                       "exact-match F1 disagrees with the set oracle");
}

CheckResult check_kic_bound() {
    Rng rng(61);
    double margin = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        // Shared span sets; KIC only refines KI by the type column.
        const auto gold = random_span_set(rng);
        const auto predicted = random_span_set(rng);
        const PrfResult ki =
            exact_match_f1(as_spans(predicted, false), as_spans(gold, false));
        const PrfResult kic =
            exact_match_f1(as_spans(predicted, true), as_spans(gold, true));
        margin = std::max(margin, kic.f1 - ki.f1);
    }
    return make_result("kic_bound", margin, 0.0,
                       "typed F1 exceeded untyped F1");
}

} // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& options) {
    if (!options.tamper.empty() && options.tamper != "crf-nan") {
        throw ConfigError("verify: unknown tamper hook '" + options.tamper +
                          "'");
    }
    std::vector<CheckResult> results;
    // A check that throws (e.g. a guard rejects poisoned state before the
    // property is even measured) is a failed check, not a crashed suite.
    const auto guard = [&results](std::initializer_list<const char*> names,
                                  const std::function<void()>& body) {
        try {
            body();
        } catch (const std::exception& e) {
            for (const char* name : names) {
                CheckResult failed;
                failed.name = name;
                failed.passed = false;
                failed.margin = std::numeric_limits<double>::infinity();
                failed.bound = 0.0;
                failed.detail = e.what();
                results.push_back(std::move(failed));
            }
        }
    };
    const auto one = [&results, &guard](const char* name, auto check) {
        guard({name}, [&results, &check] { results.push_back(check()); });
    };
    one("crf_log_partition", check_crf_log_partition);
    one("crf_viterbi", check_crf_viterbi);
    guard({"crf_finiteness"}, [&results, &options] {
        results.push_back(check_crf_finiteness(options.tamper));
    });
    one("finite_differences", check_finite_differences);
    one("grl_sign", check_grl_sign);
    one("fgsm_bounds", check_fgsm_bounds);
    one("fgsm_direction", check_fgsm_direction);
    one("loss_recomposition", check_recomposition);
    guard({"lda_conservation", "lda_simplex"},
          [&results] { check_lda(results); });
    one("nmf_monotone", check_nmf_monotone);
    one("kmeans_inertia", check_kmeans_inertia);
    one("lsa_oracle", check_lsa_oracle);
    one("metric_oracle", check_metric_oracle);
    one("kic_bound", check_kic_bound);
    return results;
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.passed; });
}

std::string format_check_line(const CheckResult& result) {
    char margin[32];
    char bound[32];
    std::snprintf(margin, sizeof(margin), "%.3e", result.margin);
    std::snprintf(bound, sizeof(bound), "%.3e", result.bound);
    std::ostringstream line;
    line << result.name;
    for (std::size_t i = result.name.size(); i < 22; ++i) line << ' ';
    line << (result.passed ? "pass" : "FAIL") << "  margin " << margin
         << "  bound " << bound;
    if (!result.detail.empty()) line << "  (" << result.detail << ")";
    return line.str();
}

} // namespace keytag
