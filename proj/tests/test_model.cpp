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

#include "keytag/model.hpp"

#include "keytag/errors.hpp"
#include "keytag/reference.hpp"
#include "keytag/serialize.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

using namespace keytag;

namespace {

EncoderConfig tiny_config() {
    EncoderConfig config;
    config.embedding_width = 3;
    config.lstm_hidden = 2;
    config.lstm_layers = 1;
    config.disc_hidden = 2;
    return config;
}

struct Fixture {
    std::vector<TaggedDocument> docs;
    Vocabulary vocab;
    KcLabelMap kc_map{std::vector<std::string>{"Process", "Task"}};
    Model model;
    EncodedBatch batch;
};

Fixture tiny_fixture(unsigned long long seed = 7,
                     EncoderConfig config = tiny_config()) {
    Fixture f;
    f.docs = parse_conll(
        "neural\tB\tProcess\nnets\tI\tProcess\nhelp\tO\tO\n\n"
        "solve\tB\tTask\ntasks\tO\tO\n\n");
    f.vocab = build_vocab(f.docs, 1);
    Rng rng{seed};
    f.model = build_model(config, f.vocab, f.kc_map, 2, rng);
    f.batch = encode_batch(doc_pointers(f.docs), f.vocab, {0, 1}, f.kc_map, 2);
    return f;
}

std::map<std::string, Tensor> branch_gradients(Fixture& f, double reversal) {
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    const LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    const Var loss =
        domain_loss(tape, leaves, latent, f.batch, f.model.n_domains,
                    reversal);
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : leaves) {
        grads.emplace(name, tape.grad(var));
    }
    return grads;
}

bool bitwise_negated(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        if (b[i] == 0.0) {
            if (x != 0.0) return false;
            continue;
        }
        const double flipped = -b[i];
        if (std::memcmp(&x, &flipped, sizeof(double)) != 0) return false;
    }
    return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::int64_t i = 0; i < a.size(); ++i) {
        const double x = a[i];
        const double y = b[i];
        if (std::memcmp(&x, &y, sizeof(double)) != 0) return false;
    }
    return true;
}

double oracle_nll(const RowMajorMatrix& emissions,
                  const RowMajorMatrix& transitions,
                  const std::vector<double>& start,
                  const std::vector<double>& end,
                  const std::vector<int>& tags) {
    const auto enumerated =
        reference::enumerate_crf(emissions, transitions, start, end);
    double gold = start[static_cast<std::size_t>(tags[0])] +
                  emissions(0, tags[0]);
    for (std::size_t t = 1; t < tags.size(); ++t) {
        gold += transitions(tags[t - 1], tags[t]) +
                emissions(static_cast<int>(t), tags[t]);
    }
    gold += end[static_cast<std::size_t>(tags.back())];
    return enumerated.log_partition - gold;
}

// Random CRF instance pushed through the tape, for oracle comparisons.
struct CrfInstance {
    Tensor emissions; // [len, 3]
    Tensor transitions;
    Tensor start;
    Tensor end;
    Eigen::ArrayXXi tags;
    Eigen::ArrayXXi mask;
    int len = 0;
};

CrfInstance random_crf(Rng& rng, int len, bool integer_scores) {
    CrfInstance inst;
    inst.len = len;
    const auto draw = [&] {
        return integer_scores
                   ? static_cast<double>(rng.uniform_int(5) - 2)
                   : rng.uniform(-2.0, 2.0);
    };
    inst.emissions = Tensor::zeros({len, num_ki_labels});
    for (std::int64_t i = 0; i < inst.emissions.size(); ++i) {
        inst.emissions[i] = draw();
    }
    inst.transitions = Tensor::zeros({num_ki_labels, num_ki_labels});
    for (std::int64_t i = 0; i < inst.transitions.size(); ++i) {
        inst.transitions[i] = draw();
    }
    inst.start = Tensor::zeros({num_ki_labels});
    inst.end = Tensor::zeros({num_ki_labels});
    for (int j = 0; j < num_ki_labels; ++j) {
        inst.start[j] = draw();
        inst.end[j] = draw();
    }
    inst.tags = Eigen::ArrayXXi::Zero(1, len);
    for (int t = 0; t < len; ++t) {
        inst.tags(0, t) = rng.uniform_int(num_ki_labels);
    }
    inst.mask = Eigen::ArrayXXi::Ones(1, len);
    return inst;
}

RowMajorMatrix to_matrix(const Tensor& t) {
    RowMajorMatrix m(t.shape()[0], t.shape()[1]);
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            m(i, j) = t[i * m.cols() + j];
        }
    }
    return m;
}

double tape_crf_nll(const CrfInstance& inst) {
    Tape tape;
    const Var emissions = tape.leaf(inst.emissions);
    const Var transitions = tape.leaf(inst.transitions);
    const Var start = tape.leaf(inst.start);
    const Var end = tape.leaf(inst.end);
    const Var loss = crf_negative_log_likelihood(
        tape, emissions, transitions, start, end, inst.tags, inst.mask);
    return tape.value(loss).scalar_value();
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("parameter spec shapes and initialization") {
    const Fixture f = tiny_fixture();
    const int latent = 3 + 2 * 2;
    CHECK(f.model.config.latent_width() == latent);
    CHECK(f.model.params.value("embedding").shape() ==
          Shape{f.vocab.size(), 3});
    CHECK(f.model.params.value("lstm0.fw.w").shape() == Shape{3, 8});
    CHECK(f.model.params.value("lstm0.bw.u").shape() == Shape{2, 8});
    CHECK(f.model.params.value("ki.w").shape() == Shape{latent, 3});
    CHECK(f.model.params.value("kc.w").shape() == Shape{latent, 3});
    CHECK(f.model.params.value("crf.transitions").shape() == Shape{3, 3});
    CHECK(f.model.params.value("dom.w2").shape() == Shape{2, 2});

    const Tensor& bias = f.model.params.value("lstm0.fw.b");
    CHECK(bias[0] == 0.0);
    CHECK(bias[2] == 1.0); // forget block [H, 2H)
    CHECK(bias[3] == 1.0);
    CHECK(bias[4] == 0.0);
    for (std::int64_t i = 0; i < 9; ++i) {
        CHECK(f.model.params.value("crf.transitions")[i] == 0.0);
    }

    SUBCASE("two layers widen the inner input") {
        EncoderConfig config = tiny_config();
        config.lstm_layers = 2;
        const auto spec = parameter_spec(config, 10, 3, 2);
        for (const auto& [name, shape] : spec) {
            if (name == "lstm1.fw.w") CHECK(shape == Shape{4, 8});
        }
    }
    SUBCASE("precomputed drops the embedding table") {
        EncoderConfig config = tiny_config();
        config.use_precomputed = true;
        const auto spec = parameter_spec(config, 10, 3, 2);
        CHECK(spec.front().first == "lstm0.fw.w");
    }
    SUBCASE("same seed rebuilds identical parameters") {
        const Fixture g = tiny_fixture();
        for (const std::string& name : f.model.params.names()) {
            CHECK(bitwise_equal(f.model.params.value(name),
                                g.model.params.value(name)));
        }
    }
    SUBCASE("fewer than two domains rejected") {
        Rng rng{1};
        CHECK_THROWS_AS(
            build_model(tiny_config(), tiny_fixture().vocab,
                        KcLabelMap{{"Task"}}, 1, rng),
            ConfigError);
    }
}

TEST_CASE("encode latent layout and masking") {
    Fixture f = tiny_fixture();
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    const LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    CHECK(latent.width == 7);
    CHECK(latent.batch == 2);
    CHECK(latent.max_len == 3);
    const Tensor& values = tape.value(latent.values);
    CHECK(values.shape() == Shape{6, 7});
    CHECK(values.all_finite());
    // Document 1 has length 2; its row at t=2 is fully masked.
    for (int col = 0; col < 7; ++col) {
        CHECK(values[(1 * 3 + 2) * 7 + col] == 0.0);
    }
    // Embedding block of document 0, token 0 equals the table row.
    const Tensor& table = f.model.params.value("embedding");
    const int id = f.batch.token_ids(0, 0);
    for (int col = 0; col < 3; ++col) {
        CHECK(values[0 * 7 + col] == table[id * 3 + col]);
    }
    // Unmasked rows carry nonzero LSTM state.
    double magnitude = 0.0;
    for (int col = 3; col < 7; ++col) {
        magnitude += std::abs(values[0 * 7 + col]);
    }
    CHECK(magnitude > 0.0);
}

TEST_CASE("encode reversal symmetry between directions") {
    // Single 3-token document, full mask.
    const auto fwd_docs = parse_conll("a\tO\tO\nb\tO\tO\nc\tO\tO\n\n");
    const auto rev_docs = parse_conll("c\tO\tO\nb\tO\tO\na\tO\tO\n\n");
    const auto vocab = build_vocab(fwd_docs, 1);
    Rng rng{5};
    Model forward_model =
        build_model(tiny_config(), vocab, KcLabelMap{{}}, 2, rng);
    Model swapped = forward_model;
    for (const char* stem : {"w", "u", "b"}) {
        const std::string fw = std::string{"lstm0.fw."} + stem;
        const std::string bw = std::string{"lstm0.bw."} + stem;
        std::swap(swapped.params.value(fw), swapped.params.value(bw));
    }
    const auto batch_fwd =
        encode_batch(doc_pointers(fwd_docs), vocab, {0}, KcLabelMap{{}}, 2);
    const auto batch_rev =
        encode_batch(doc_pointers(rev_docs), vocab, {0}, KcLabelMap{{}}, 2);

    Tape tape_a, tape_b;
    VarMap leaves_a = make_leaves(tape_a, forward_model.params);
    VarMap leaves_b = make_leaves(tape_b, swapped.params);
    const Tensor latent_a = tape_a.value(
        encode(tape_a, leaves_a, forward_model, batch_fwd, false).values);
    const Tensor latent_b = tape_b.value(
        encode(tape_b, leaves_b, swapped, batch_rev, false).values);

    // Forward states of the reversed run (swapped weights) must equal the
    // backward states of the original at mirrored positions.
    const int width = 7;
    for (int t = 0; t < 3; ++t) {
        for (int h = 0; h < 2; ++h) {
            const double fwd_rev = latent_b[t * width + 3 + h];
            const double bwd_orig = latent_a[(2 - t) * width + 5 + h];
            CHECK(fwd_rev == doctest::Approx(bwd_orig).epsilon(1e-12));
        }
    }
}

TEST_CASE("encode dropout is inert at eval and scales at train") {
    Fixture f = tiny_fixture();
    Model with_dropout = f.model;
    with_dropout.config.dropout_rate = 0.5;

    Tape tape_a, tape_b;
    VarMap leaves_a = make_leaves(tape_a, f.model.params);
    VarMap leaves_b = make_leaves(tape_b, with_dropout.params);
    const Tensor plain = tape_a.value(
        encode(tape_a, leaves_a, f.model, f.batch, false).values);
    const Tensor eval_mode = tape_b.value(
        encode(tape_b, leaves_b, with_dropout, f.batch, false).values);
    CHECK(bitwise_equal(plain, eval_mode));

    Rng drop_rng{99};
    Tape tape_c;
    VarMap leaves_c = make_leaves(tape_c, with_dropout.params);
    const Tensor train_mode = tape_c.value(
        encode(tape_c, leaves_c, with_dropout, f.batch, true, &drop_rng)
            .values);
    CHECK_FALSE(bitwise_equal(plain, train_mode));
    CHECK_THROWS_AS(
        encode(tape_c, leaves_c, with_dropout, f.batch, true, nullptr),
        ConfigError);
}

TEST_CASE("encode precomputed embeddings") {
    auto docs = parse_conll("a\tO\tO\nb\tO\tO\n\n");
    const std::string emb =
        "#doc doc0 2 3\n0.5 -0.5 1.0\n0.25 0.0 -1.0\n";
    attach_embeddings(docs, parse_embeddings(emb));
    const auto vocab = build_vocab(docs, 1);
    EncoderConfig config = tiny_config();
    config.use_precomputed = true;
    Rng rng{3};
    const Model model = build_model(config, vocab, KcLabelMap{{}}, 2, rng);
    const auto batch =
        encode_batch(doc_pointers(docs), vocab, {0}, KcLabelMap{{}}, 2);

    Tape tape;
    VarMap leaves = make_leaves(tape, model.params);
    const Tensor latent =
        tape.value(encode(tape, leaves, model, batch, false).values);
    CHECK(latent[0] == 0.5);
    CHECK(latent[1] == -0.5);
    CHECK(latent[7 + 2] == -1.0);

    SUBCASE("width mismatch rejected") {
        EncoderConfig wrong = config;
        wrong.embedding_width = 4;
        Rng rng2{3};
        const Model bad = build_model(wrong, vocab, KcLabelMap{{}}, 2, rng2);
        Tape tape2;
        VarMap leaves2 = make_leaves(tape2, bad.params);
        CHECK_THROWS_AS(encode(tape2, leaves2, bad, batch, false),
                        ConfigError);
    }
    SUBCASE("missing block rejected") {
        const auto plain_docs = parse_conll("a\tO\tO\n\n");
        const auto plain_batch = encode_batch(doc_pointers(plain_docs), vocab,
                                              {0}, KcLabelMap{{}}, 2);
        Tape tape3;
        VarMap leaves3 = make_leaves(tape3, model.params);
        CHECK_THROWS_AS(encode(tape3, leaves3, model, plain_batch, false),
                        DataError);
    }
}

TEST_CASE("crf nll closed forms") {
    SUBCASE("single position is log-sum-exp minus the gold score") {
        CrfInstance inst;
        inst.len = 1;
        inst.emissions = Tensor::from_vector({1.0, 2.0, 0.5});
        inst.emissions = inst.emissions.reshaped({1, 3});
        inst.transitions = Tensor::zeros({3, 3});
        inst.start = Tensor::from_vector({0.2, 0.0, 0.0});
        inst.end = Tensor::from_vector({0.0, 0.1, 0.0});
        inst.tags = Eigen::ArrayXXi::Zero(1, 1);
        inst.mask = Eigen::ArrayXXi::Ones(1, 1);
        const double z = std::log(std::exp(1.2) + std::exp(2.1) +
                                  std::exp(0.5));
        CHECK(tape_crf_nll(inst) ==
              doctest::Approx(z - 1.2).epsilon(1e-12));
    }
    SUBCASE("all-zero scores give n log 3 for any gold path") {
        for (const int len : {1, 2, 5}) {
            CrfInstance inst;
            inst.len = len;
            inst.emissions = Tensor::zeros({len, 3});
            inst.transitions = Tensor::zeros({3, 3});
            inst.start = Tensor::zeros({3});
            inst.end = Tensor::zeros({3});
            inst.tags = Eigen::ArrayXXi::Zero(1, len);
            inst.tags(0, len - 1) = 1;
            inst.mask = Eigen::ArrayXXi::Ones(1, len);
            CHECK(tape_crf_nll(inst) ==
                  doctest::Approx(len * std::log(3.0)).epsilon(1e-12));
        }
    }
}

TEST_CASE("crf nll matches path enumeration on random instances") {
    Rng rng{61};
    for (int trial = 0; trial < 40; ++trial) {
        const int len = 1 + rng.uniform_int(6);
        const CrfInstance inst = random_crf(rng, len, false);
        std::vector<double> start(3), end(3);
        std::vector<int> tags(static_cast<std::size_t>(len));
        for (int j = 0; j < 3; ++j) {
            start[static_cast<std::size_t>(j)] = inst.start[j];
            end[static_cast<std::size_t>(j)] = inst.end[j];
        }
        for (int t = 0; t < len; ++t) tags[static_cast<std::size_t>(t)] = inst.tags(0, t);
        const double expect =
            oracle_nll(to_matrix(inst.emissions), to_matrix(inst.transitions),
                       start, end, tags);
        CHECK(tape_crf_nll(inst) == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("crf distribution normalizes against enumerated paths") {
    Rng rng{62};
    for (int trial = 0; trial < 5; ++trial) {
        const int len = 2 + rng.uniform_int(5);
        const CrfInstance inst = random_crf(rng, len, false);
        std::vector<double> start(3), end(3);
        for (int j = 0; j < 3; ++j) {
            start[static_cast<std::size_t>(j)] = inst.start[j];
            end[static_cast<std::size_t>(j)] = inst.end[j];
        }
        const auto enumerated = reference::enumerate_crf(
            to_matrix(inst.emissions), to_matrix(inst.transitions), start,
            end);
        // Recover log Z from the production NLL by adding back the gold
        // path score of the all-zeros tagging.
        std::vector<int> zeros_tags(static_cast<std::size_t>(len), 0);
        const double gold_zero =
            -(oracle_nll(to_matrix(inst.emissions),
                         to_matrix(inst.transitions), start, end, zeros_tags) -
              enumerated.log_partition);
        CrfInstance zero_gold = inst;
        zero_gold.tags.setZero();
        const double log_z = tape_crf_nll(zero_gold) + gold_zero;
        CHECK(log_z ==
              doctest::Approx(enumerated.log_partition).epsilon(1e-8));
        CHECK(enumerated.log_partition >= enumerated.best_score);
    }
}

TEST_CASE("batched variable-length nll equals the mean of singles") {
    Rng rng{63};
    const std::vector<int> lengths{3, 1, 4};
    const int batch = 3;
    const int max_len = 4;
    Tensor emissions = Tensor::zeros({batch * max_len, 3});
    for (std::int64_t i = 0; i < emissions.size(); ++i) {
        emissions[i] = rng.uniform(-2.0, 2.0);
    }
    const CrfInstance shared = random_crf(rng, 1, false);
    Eigen::ArrayXXi tags = Eigen::ArrayXXi::Zero(batch, max_len);
    Eigen::ArrayXXi mask = Eigen::ArrayXXi::Zero(batch, max_len);
    for (int b = 0; b < batch; ++b) {
        Bio prev = Bio::outside;
        for (int t = 0; t < lengths[static_cast<std::size_t>(b)]; ++t) {
            mask(b, t) = 1;
            const int draw = rng.uniform_int(3);
            // Keep tags arbitrary; the CRF itself accepts any sequence.
            tags(b, t) = draw;
            prev = static_cast<Bio>(draw);
        }
        (void)prev;
    }

    Tape tape;
    const Var em = tape.leaf(emissions);
    const Var tr = tape.leaf(shared.transitions);
    const Var st = tape.leaf(shared.start);
    const Var en = tape.leaf(shared.end);
    const double batched =
        tape.value(crf_negative_log_likelihood(tape, em, tr, st, en, tags,
                                               mask))
            .scalar_value();

    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        const int len = lengths[static_cast<std::size_t>(b)];
        Tensor doc_em = Tensor::zeros({len, 3});
        for (int t = 0; t < len; ++t) {
            for (int j = 0; j < 3; ++j) {
                doc_em[t * 3 + j] = emissions[(b * max_len + t) * 3 + j];
            }
        }
        CrfInstance single;
        single.len = len;
        single.emissions = doc_em;
        single.transitions = shared.transitions;
        single.start = shared.start;
        single.end = shared.end;
        single.tags = Eigen::ArrayXXi::Zero(1, len);
        for (int t = 0; t < len; ++t) single.tags(0, t) = tags(b, t);
        single.mask = Eigen::ArrayXXi::Ones(1, len);
        total += tape_crf_nll(single);
    }
    CHECK(batched == doctest::Approx(total / batch).epsilon(1e-12));
}

TEST_CASE("crf nll gradient passes finite differences") {
    Rng rng{64};
    const CrfInstance inst = random_crf(rng, 4, false);
    ParameterStore store;
    store.add("em", inst.emissions);
    store.add("tr", inst.transitions);
    store.add("st", inst.start);
    store.add("en", inst.end);
    const Computation comp = [&](Tape& tape, const VarMap& leaves) {
        return crf_negative_log_likelihood(
            tape, leaves.at("em"), leaves.at("tr"), leaves.at("st"),
            leaves.at("en"), inst.tags, inst.mask);
    };
    CHECK(finite_difference_check(comp, store, 1e-5) < 1e-6);
}

TEST_CASE("crf nll input validation") {
    CrfInstance inst;
    inst.emissions = Tensor::zeros({2, 3});
    inst.transitions = Tensor::zeros({3, 3});
    inst.start = Tensor::zeros({3});
    inst.end = Tensor::zeros({3});
    SUBCASE("zero-length row") {
        inst.tags = Eigen::ArrayXXi::Zero(1, 2);
        inst.mask = Eigen::ArrayXXi::Zero(1, 2);
        CHECK_THROWS_AS(tape_crf_nll(inst), DataError);
    }
    SUBCASE("non-contiguous mask") {
        inst.tags = Eigen::ArrayXXi::Zero(1, 2);
        inst.mask = Eigen::ArrayXXi::Zero(1, 2);
        inst.mask(0, 1) = 1;
        CHECK_THROWS_AS(tape_crf_nll(inst), NumericError);
    }
    SUBCASE("tag out of range") {
        inst.tags = Eigen::ArrayXXi::Zero(1, 2);
        inst.tags(0, 0) = 7;
        inst.mask = Eigen::ArrayXXi::Ones(1, 2);
        CHECK_THROWS_AS(tape_crf_nll(inst), DataError);
    }
}

TEST_CASE("viterbi decode matches enumeration including ties") {
    SUBCASE("hand cases") {
        RowMajorMatrix em(1, 3);
        em << 5.0, 1.0, 1.0;
        const RowMajorMatrix tr = RowMajorMatrix::Zero(3, 3);
        const Eigen::VectorXd zero3 = Eigen::VectorXd::Zero(3);
        CHECK(crf_decode(em, tr, zero3, zero3) == std::vector<int>{0});

        const RowMajorMatrix flat = RowMajorMatrix::Zero(4, 3);
        CHECK(crf_decode(flat, tr, zero3, zero3) ==
              std::vector<int>{0, 0, 0, 0});
    }
    SUBCASE("random real-valued instances") {
        Rng rng{65};
        for (int trial = 0; trial < 60; ++trial) {
            const int len = 1 + rng.uniform_int(6);
            const CrfInstance inst = random_crf(rng, len, false);
            std::vector<double> start(3), end(3);
            Eigen::VectorXd start_v(3), end_v(3);
            for (int j = 0; j < 3; ++j) {
                start[static_cast<std::size_t>(j)] = inst.start[j];
                end[static_cast<std::size_t>(j)] = inst.end[j];
                start_v(j) = inst.start[j];
                end_v(j) = inst.end[j];
            }
            const auto enumerated = reference::enumerate_crf(
                to_matrix(inst.emissions), to_matrix(inst.transitions), start,
                end);
            CHECK(crf_decode(to_matrix(inst.emissions),
                             to_matrix(inst.transitions), start_v,
                             end_v) == enumerated.best_path);
        }
    }
    SUBCASE("integer-valued instances force ties") {
        Rng rng{66};
        int tie_count = 0;
        for (int trial = 0; trial < 60; ++trial) {
            const int len = 2 + rng.uniform_int(4);
            const CrfInstance inst = random_crf(rng, len, true);
            std::vector<double> start(3), end(3);
            Eigen::VectorXd start_v(3), end_v(3);
            for (int j = 0; j < 3; ++j) {
                start[static_cast<std::size_t>(j)] = inst.start[j];
                end[static_cast<std::size_t>(j)] = inst.end[j];
                start_v(j) = inst.start[j];
                end_v(j) = inst.end[j];
            }
            const auto enumerated = reference::enumerate_crf(
                to_matrix(inst.emissions), to_matrix(inst.transitions), start,
                end);
            const auto decoded =
                crf_decode(to_matrix(inst.emissions),
                           to_matrix(inst.transitions), start_v, end_v);
            CHECK(decoded == enumerated.best_path);
            // Count instances where some one-position mutation of the best
            // path ties it, so the tie rule is genuinely exercised.
            const RowMajorMatrix em = to_matrix(inst.emissions);
            const RowMajorMatrix tr = to_matrix(inst.transitions);
            bool saw_tie = false;
            std::vector<int> probe = enumerated.best_path;
            for (std::size_t t = 0; t < probe.size() && !saw_tie; ++t) {
                for (int j = 0; j < 3; ++j) {
                    if (j == enumerated.best_path[t]) continue;
                    probe[t] = j;
                    double score = start[static_cast<std::size_t>(probe[0])] +
                                   em(0, probe[0]);
                    for (std::size_t s = 1; s < probe.size(); ++s) {
                        score += tr(probe[s - 1], probe[s]) +
                                 em(static_cast<int>(s), probe[s]);
                    }
                    score += end[static_cast<std::size_t>(probe.back())];
                    if (score == enumerated.best_score) {
                        saw_tie = true;
                        break;
                    }
                }
                probe[t] = enumerated.best_path[t];
            }
            if (saw_tie) ++tie_count;
        }
        CHECK(tie_count > 5);
    }
}

TEST_CASE("hard O to I mask pins the transition") {
    Fixture f = tiny_fixture();
    f.model.config.hard_o_to_i = true;
    const RowMajorMatrix tr = effective_transitions(f.model);
    CHECK(tr(0, 2) == -1e4);
    CHECK(tr(0, 1) == 0.0);

    // On the tape the pinned entry contributes no gradient.
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    const LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    const Var loss = tag_loss(tape, leaves, latent, f.batch, true);
    tape.backward(loss);
    const Tensor& grad = tape.grad(leaves.at("crf.transitions"));
    CHECK(grad[0 * 3 + 2] == 0.0);
    double other = 0.0;
    for (std::int64_t i = 0; i < 9; ++i) other += std::abs(grad[i]);
    CHECK(other > 0.0);
}

TEST_CASE("kc loss closed forms and oracle") {
    const auto docs = parse_conll("a\tB\tTask\nb\tI\tTask\n\n");
    const auto vocab = build_vocab(docs, 1);
    const KcLabelMap kc_map{{"Task"}};
    const auto batch =
        encode_batch(doc_pointers(docs), vocab, {0}, kc_map, 2);

    SUBCASE("zero logits give log C") {
        Tape tape;
        VarMap leaves;
        leaves["kc.w"] = tape.leaf(Tensor::zeros({4, 2}));
        LatentBatch latent;
        latent.values = tape.leaf(Tensor::full({2, 4}, 0.3));
        latent.batch = 1;
        latent.max_len = 2;
        latent.width = 4;
        const Var loss = kc_loss(tape, leaves, latent, batch);
        CHECK(tape.value(loss).scalar_value() ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("large correct margin drives the loss to zero") {
        Tape tape;
        VarMap leaves;
        Tensor w = Tensor::zeros({1, 2});
        w[1] = 30.0; // both tokens carry label Task = id 1
        leaves["kc.w"] = tape.leaf(w);
        LatentBatch latent;
        latent.values = tape.leaf(Tensor::full({2, 1}, 1.0));
        latent.batch = 1;
        latent.max_len = 2;
        latent.width = 1;
        const Var loss = kc_loss(tape, leaves, latent, batch);
        CHECK(tape.value(loss).scalar_value() < 1e-12);
    }
    SUBCASE("matches a hand-rolled cross-entropy") {
        Rng rng{70};
        Tensor latent_values = Tensor::zeros({2, 4});
        Tensor w = Tensor::zeros({4, 2});
        for (std::int64_t i = 0; i < latent_values.size(); ++i) {
            latent_values[i] = rng.uniform(-1.0, 1.0);
        }
        for (std::int64_t i = 0; i < w.size(); ++i) {
            w[i] = rng.uniform(-1.0, 1.0);
        }
        double expect = 0.0;
        for (int t = 0; t < 2; ++t) {
            double logits[2] = {0.0, 0.0};
            for (int c = 0; c < 2; ++c) {
                for (int k = 0; k < 4; ++k) {
                    logits[c] += latent_values[t * 4 + k] * w[k * 2 + c];
                }
            }
            const int label = batch.kc_labels(0, t);
            const double peak = std::max(logits[0], logits[1]);
            const double lse =
                peak + std::log(std::exp(logits[0] - peak) +
                                std::exp(logits[1] - peak));
            expect += lse - logits[label];
        }
        expect /= 2.0;

        Tape tape;
        VarMap leaves;
        leaves["kc.w"] = tape.leaf(w);
        LatentBatch latent;
        latent.values = tape.leaf(latent_values);
        latent.batch = 1;
        latent.max_len = 2;
        latent.width = 4;
        const Var loss = kc_loss(tape, leaves, latent, batch);
        CHECK(tape.value(loss).scalar_value() ==
              doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("domain loss pooling and hand computation") {
    const auto docs = parse_conll("a\tO\tO\nb\tO\tO\n\nc\tO\tO\n\n");
    const auto vocab = build_vocab(docs, 1);
    const auto batch =
        encode_batch(doc_pointers(docs), vocab, {1, 0}, KcLabelMap{{}}, 2);

    Tape tape;
    VarMap leaves;
    Tensor w1 = Tensor::zeros({2, 2});
    w1[0] = 1.0;
    w1[3] = 1.0;
    leaves["dom.w1"] = tape.leaf(w1);
    leaves["dom.b1"] = tape.leaf(Tensor::zeros({2}));
    Tensor w2 = Tensor::zeros({2, 2});
    w2[0] = 2.0;
    w2[3] = 2.0;
    leaves["dom.w2"] = tape.leaf(w2);
    leaves["dom.b2"] = tape.leaf(Tensor::zeros({2}));

    Tensor latent_values = Tensor::zeros({4, 2});
    latent_values[0] = 1.0;  // doc 0, token 0
    latent_values[2] = 3.0;  // doc 0, token 1
    latent_values[4] = -2.0; // doc 1, token 0: pooled (-2, 0)
    LatentBatch latent;
    latent.values = tape.leaf(latent_values);
    latent.batch = 2;
    latent.max_len = 2;
    latent.width = 2;

    const Var loss = domain_loss(tape, leaves, latent, batch, 2);
    // Doc 0 pools to (2, 0): logits (2 tanh 2, 0), gold domain 1.
    // Doc 1 pools to (-2, 0): logits (2 tanh -2, 0), gold domain 0.
    const double a = 2.0 * std::tanh(2.0);
    const double doc0 = std::log(std::exp(a) + 1.0) - 0.0;
    const double doc1 = std::log(std::exp(-a) + 1.0) - (-a);
    CHECK(tape.value(loss).scalar_value() ==
          doctest::Approx((doc0 + doc1) / 2.0).epsilon(1e-12));

    CHECK_THROWS_AS(domain_loss(tape, leaves, latent, batch, 1), ConfigError);
}

TEST_CASE("gradient reversal flips encoder gradients exactly") {
    Fixture f = tiny_fixture(41);
    auto reversed = branch_gradients(f, -1.0);
    auto identity = branch_gradients(f, 1.0);

    int encoder_params = 0;
    for (const std::string& name : f.model.params.names()) {
        const bool discriminator = name.rfind("dom.", 0) == 0;
        if (discriminator) {
            CHECK(bitwise_equal(reversed.at(name), identity.at(name)));
        } else {
            CHECK(bitwise_negated(reversed.at(name), identity.at(name)));
            ++encoder_params;
        }
    }
    CHECK(encoder_params > 4);

    // Sanity: the encoder actually receives signal from this branch.
    double magnitude = 0.0;
    const Tensor& g = identity.at("lstm0.fw.w");
    for (std::int64_t i = 0; i < g.size(); ++i) magnitude += std::abs(g[i]);
    CHECK(magnitude > 0.0);
}

TEST_CASE("scaling the domain branch by zero silences every gradient") {
    Fixture f = tiny_fixture(43);
    Tape tape;
    VarMap leaves = make_leaves(tape, f.model.params);
    const LatentBatch latent =
        encode(tape, leaves, f.model, f.batch, false, nullptr);
    const Var loss =
        scale(domain_loss(tape, leaves, latent, f.batch, 2), 0.0);
    tape.backward(loss);
    for (const auto& [name, var] : leaves) {
        const Tensor& grad = tape.grad(var);
        for (std::int64_t i = 0; i < grad.size(); ++i) {
            CHECK(grad[i] == 0.0);
        }
    }
}

TEST_CASE("discriminator separates constructed latents") {
    // Two clusters at +-v; the domain head trained alone (frozen latents)
    // must reach high accuracy.
    Rng rng{80};
    const int docs_per_domain = 10;
    const int batch_size = 2 * docs_per_domain;
    Tensor latent_values = Tensor::zeros({batch_size, 2});
    Eigen::ArrayXi domains(batch_size);
    std::string corpus_text;
    for (int d = 0; d < batch_size; ++d) {
        const int domain = d < docs_per_domain ? 0 : 1;
        const double center = domain == 0 ? 2.0 : -2.0;
        latent_values[d * 2] = center + rng.normal() * 0.3;
        latent_values[d * 2 + 1] = rng.normal() * 0.3;
        domains(d) = domain;
        corpus_text += "tok\tO\tO\n\n";
    }
    const auto docs = parse_conll(corpus_text);
    const auto vocab = build_vocab(docs, 1);
    std::vector<int> domain_vec(static_cast<std::size_t>(batch_size));
    for (int d = 0; d < batch_size; ++d) {
        domain_vec[static_cast<std::size_t>(d)] = domains(d);
    }
    const auto batch = encode_batch(doc_pointers(docs), vocab, domain_vec,
                                    KcLabelMap{{}}, 2);

    ParameterStore params;
    params.add("dom.w1", Tensor::zeros({2, 4}));
    params.add("dom.b1", Tensor::zeros({4}));
    params.add("dom.w2", Tensor::zeros({4, 2}));
    params.add("dom.b2", Tensor::zeros({2}));
    for (std::int64_t i = 0; i < params.value("dom.w1").size(); ++i) {
        params.value("dom.w1")[i] = rng.uniform(-0.5, 0.5);
    }
    for (std::int64_t i = 0; i < params.value("dom.w2").size(); ++i) {
        params.value("dom.w2")[i] = rng.uniform(-0.5, 0.5);
    }

    for (int step = 0; step < 200; ++step) {
        Tape tape;
        VarMap leaves;
        for (const std::string& name : params.names()) {
            leaves[name] = tape.leaf(params.value(name));
        }
        LatentBatch latent;
        latent.values = tape.constant(latent_values);
        latent.batch = batch_size;
        latent.max_len = 1;
        latent.width = 2;
        const Var loss = domain_loss(tape, leaves, latent, batch, 2);
        tape.backward(loss);
        for (const std::string& name : params.names()) {
            Tensor& value = params.value(name);
            const Tensor& grad = tape.grad(leaves.at(name));
            // Plain gradient ascent-free descent; the reversal affects only
            // the latent, which is frozen here.
            for (std::int64_t i = 0; i < value.size(); ++i) {
                value[i] -= 0.5 * grad[i];
            }
        }
    }

    int correct = 0;
    for (int d = 0; d < batch_size; ++d) {
        double hidden[4];
        for (int h = 0; h < 4; ++h) {
            hidden[h] = std::tanh(
                latent_values[d * 2] * params.value("dom.w1")[0 * 4 + h] +
                latent_values[d * 2 + 1] * params.value("dom.w1")[1 * 4 + h] +
                params.value("dom.b1")[h]);
        }
        double logits[2] = {params.value("dom.b2")[0],
                            params.value("dom.b2")[1]};
        for (int c = 0; c < 2; ++c) {
            for (int h = 0; h < 4; ++h) {
                logits[c] += hidden[h] * params.value("dom.w2")[h * 2 + c];
            }
        }
        const int guess = logits[1] > logits[0] ? 1 : 0;
        if (guess == domains(d)) ++correct;
    }
    CHECK(correct >= static_cast<int>(0.9 * batch_size));
}

TEST_CASE("full tiny model passes finite differences") {
    // The reversal layer is instantiated as identity here: with the real
    // factor -1 the reported encoder gradients are deliberately not the
    // derivative of the forward value, which is exactly what the bitwise
    // sign-contract case pins down instead.
    Fixture f = tiny_fixture(90);
    const Computation comp = [&](Tape& tape, const VarMap& leaves) {
        const LatentBatch latent =
            encode(tape, leaves, f.model, f.batch, false, nullptr);
        const Var l_tag = tag_loss(tape, leaves, latent, f.batch, false);
        const Var l_class = kc_loss(tape, leaves, latent, f.batch);
        const Var l_da =
            domain_loss(tape, leaves, latent, f.batch, 2, 1.0);
        return add(add(l_tag, l_class), scale(l_da, 0.1));
    };
    CHECK(finite_difference_check(comp, f.model.params, 1e-5) < 1e-5);
}

TEST_CASE("predict shapes and determinism") {
    Fixture f = tiny_fixture(91);
    const Prediction a = predict(f.model, f.batch);
    const Prediction b = predict(f.model, f.batch);
    REQUIRE(a.ki.size() == 2);
    CHECK(a.ki[0].size() == 3);
    CHECK(a.ki[1].size() == 2);
    CHECK(a.kc[0].size() == 3);
    CHECK(a.ki == b.ki);
    CHECK(a.kc == b.kc);
    for (const auto& path : a.ki) {
        for (const int tag : path) {
            CHECK(tag >= 0);
            CHECK(tag < 3);
        }
    }
    for (const auto& path : a.kc) {
        for (const int label : path) {
            CHECK(label >= 0);
            CHECK(label < f.model.kc_map.size());
        }
    }
}

TEST_CASE("model checkpoint round trip") {
    namespace fs = std::filesystem;
    const fs::path path = fs::temp_directory_path() / "keytag_model_test.ckpt";
    Fixture f = tiny_fixture(92);
    save_model(f.model, path.string());
    Model loaded = load_model(path.string());

    CHECK(loaded.config.embedding_width == 3);
    CHECK(loaded.config.lstm_hidden == 2);
    CHECK(loaded.n_domains == 2);
    CHECK(loaded.kc_map == f.model.kc_map);
    CHECK(loaded.vocab.size() == f.vocab.size());
    CHECK(loaded.vocab.token(2) == f.vocab.token(2));
    for (const std::string& name : f.model.params.names()) {
        const Tensor& original = f.model.params.value(name);
        const Tensor& reread = loaded.params.value(name);
        REQUIRE(original.same_shape(reread));
        for (std::int64_t i = 0; i < original.size(); ++i) {
            CHECK(reread[i] ==
                  static_cast<double>(static_cast<float>(original[i])));
        }
    }
    // A second trip is lossless, so predictions stabilize after one save.
    const fs::path path2 =
        fs::temp_directory_path() / "keytag_model_test2.ckpt";
    save_model(loaded, path2.string());
    const Model again = load_model(path2.string());
    const Prediction first = predict(loaded, f.batch);
    const Prediction second = predict(again, f.batch);
    CHECK(first.ki == second.ki);
    CHECK(first.kc == second.kc);
    fs::remove(path);
    fs::remove(path2);
}

TEST_CASE("model checkpoint validation") {
    namespace fs = std::filesystem;
    const fs::path path =
        fs::temp_directory_path() / "keytag_model_bad.ckpt";
    Fixture f = tiny_fixture(93);

    SUBCASE("shape mismatch") {
        save_model(f.model, path.string());
        Container raw = Container::load_file(path.string(), "model");
        Container rebuilt{"model", 1};
        for (const std::string& key :
             {"embedding_width", "lstm_hidden", "lstm_layers", "disc_hidden",
              "use_precomputed", "dropout_rate", "hard_o_to_i", "n_domains"}) {
            rebuilt.set(key, raw.get(key));
        }
        for (const std::string& v : raw.get_all("type")) {
            rebuilt.set("type", v);
        }
        for (const std::string& v : raw.get_all("token")) {
            rebuilt.set("token", v);
        }
        for (const std::string& name : raw.array_names()) {
            if (name == "ki.w") {
                rebuilt.add_array(name, Tensor::zeros({2, 2}));
            } else {
                rebuilt.add_array(name, raw.array(name));
            }
        }
        rebuilt.save_file(path.string());
        CHECK_THROWS_AS(load_model(path.string()), CheckpointError);
    }
    SUBCASE("non-finite parameter") {
        f.model.params.value("crf.transitions")[0] =
            std::numeric_limits<double>::quiet_NaN();
        save_model(f.model, path.string());
        CHECK_THROWS_AS(load_model(path.string()), CheckpointError);
    }
    SUBCASE("wrong kind") {
        Container c{"topics", 1};
        c.save_file(path.string());
        CHECK_THROWS_AS(load_model(path.string()), CheckpointError);
    }
    fs::remove(path);
}

} // TEST_SUITE
