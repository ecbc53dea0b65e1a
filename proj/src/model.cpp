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
#include "keytag/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace keytag {

namespace {

constexpr double o_to_i_penalty = -1e4;
constexpr int model_format_version = 1;

Var leaf_at(const VarMap& leaves, const std::string& name) {
    const auto it = leaves.find(name);
    if (it == leaves.end()) {
        throw CheckpointError("parameter '" + name + "' is missing");
    }
    return it->second;
}

std::string lstm_prefix(int layer, bool forward) {
    return "lstm" + std::to_string(layer) + (forward ? ".fw." : ".bw.");
}

/// Row permutation turning a time-major stack (row t*batch + b) into
/// batch-major order (row b*max_len + t).
std::vector<int> to_batch_major(int batch, int max_len) {
    std::vector<int> perm(static_cast<std::size_t>(batch * max_len));
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < max_len; ++t) {
            perm[static_cast<std::size_t>(b * max_len + t)] = t * batch + b;
        }
    }
    return perm;
}

std::vector<int> rows_at_time(int batch, int max_len, int t) {
    std::vector<int> rows(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        rows[static_cast<std::size_t>(b)] = b * max_len + t;
    }
    return rows;
}

Tensor mask_column(const Eigen::ArrayXXi& mask, int t, bool inverted) {
    const int batch = static_cast<int>(mask.rows());
    Tensor col = Tensor::zeros({batch, 1});
    for (int b = 0; b < batch; ++b) {
        const double m = static_cast<double>(mask(b, t));
        col[b] = inverted ? 1.0 - m : m;
    }
    return col;
}

Tensor flat_mask_column(const Eigen::ArrayXXi& mask) {
    const int batch = static_cast<int>(mask.rows());
    const int max_len = static_cast<int>(mask.cols());
    Tensor col = Tensor::zeros({batch * max_len, 1});
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < max_len; ++t) {
            col[b * max_len + t] = static_cast<double>(mask(b, t));
        }
    }
    return col;
}

std::vector<int> row_lengths(const Eigen::ArrayXXi& mask) {
    const int batch = static_cast<int>(mask.rows());
    const int max_len = static_cast<int>(mask.cols());
    std::vector<int> lengths(static_cast<std::size_t>(batch), 0);
    for (int b = 0; b < batch; ++b) {
        int len = 0;
        while (len < max_len && mask(b, len) == 1) ++len;
        for (int t = len; t < max_len; ++t) {
            if (mask(b, t) != 0) {
                throw NumericError("mask rows must be contiguous blocks of "
                                   "ones starting at position 0");
            }
        }
        if (len == 0) {
            throw DataError("zero-length sequence in batch row " +
                            std::to_string(b));
        }
        lengths[static_cast<std::size_t>(b)] = len;
    }
    return lengths;
}

/// One LSTM direction over a batch-major input [batch*max_len, in]. Returns
/// the per-timestep hidden states, batch-major [batch*max_len, hidden].
/// States carry over unchanged at masked positions, so the backward
/// direction starts from zero state until it enters each document.
Var run_lstm_direction(Tape& tape, const VarMap& leaves, Var input,
                       const std::string& prefix, int batch, int max_len,
                       int hidden, bool forward,
                       const std::vector<Var>& mask_cols,
                       const std::vector<Var>& inv_mask_cols) {
    const Var w = leaf_at(leaves, prefix + "w");
    const Var u = leaf_at(leaves, prefix + "u");
    const Var bias = leaf_at(leaves, prefix + "b");

    Var h = tape.constant(Tensor::zeros({batch, hidden}));
    Var c = tape.constant(Tensor::zeros({batch, hidden}));
    std::vector<Var> states(static_cast<std::size_t>(max_len));
    for (int step = 0; step < max_len; ++step) {
        const int t = forward ? step : max_len - 1 - step;
        const Var x = gather_rows(input, rows_at_time(batch, max_len, t));
        const Var gates =
            add_rowwise(add(matmul(x, w), matmul(h, u)), bias);
        const Var gate_i = sigmoid(slice_cols(gates, 0, hidden));
        const Var gate_f = sigmoid(slice_cols(gates, hidden, hidden));
        const Var gate_g = tanh(slice_cols(gates, 2 * hidden, hidden));
        const Var gate_o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
        const Var c_new = add(mul(gate_f, c), mul(gate_i, gate_g));
        const Var h_new = mul(gate_o, tanh(c_new));
        const std::size_t ti = static_cast<std::size_t>(t);
        c = add(scale_rows(c_new, mask_cols[ti]),
                scale_rows(c, inv_mask_cols[ti]));
        h = add(scale_rows(h_new, mask_cols[ti]),
                scale_rows(h, inv_mask_cols[ti]));
        states[ti] = h;
    }
    const Var time_major = concat_rows(states);
    return gather_rows(time_major, to_batch_major(batch, max_len));
}

Var apply_hard_o_to_i(Tape& tape, Var transitions) {
    const Shape shape = transitions.tape->value(transitions).shape();
    Tensor keep = Tensor::full(shape, 1.0);
    Tensor forced = Tensor::zeros(shape);
    const int n = shape[1];
    keep[static_cast<int>(Bio::outside) * n + static_cast<int>(Bio::inside)] =
        0.0;
    forced[static_cast<int>(Bio::outside) * n +
           static_cast<int>(Bio::inside)] = o_to_i_penalty;
    return add(mul(transitions, tape.constant(keep)), tape.constant(forced));
}

} // namespace

void EncoderConfig::validate() const {
    if (embedding_width < 1) {
        throw ConfigError("embedding_width must be >= 1");
    }
    if (lstm_hidden < 1) {
        throw ConfigError("lstm_hidden must be >= 1");
    }
    if (lstm_layers < 1) {
        throw ConfigError("lstm_layers must be >= 1");
    }
    if (disc_hidden < 1) {
        throw ConfigError("disc_hidden must be >= 1");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw ConfigError("dropout_rate must lie in [0, 1)");
    }
}

std::vector<std::pair<std::string, Shape>> parameter_spec(
    const EncoderConfig& config, int vocab_size, int n_kc_labels,
    int n_domains) {
    config.validate();
    const int hidden = config.lstm_hidden;
    const int latent = config.latent_width();
    std::vector<std::pair<std::string, Shape>> spec;
    if (!config.use_precomputed) {
        spec.emplace_back("embedding", Shape{vocab_size,
                                             config.embedding_width});
    }
    for (int layer = 0; layer < config.lstm_layers; ++layer) {
        const int in = layer == 0 ? config.embedding_width : 2 * hidden;
        for (const bool forward : {true, false}) {
            const std::string prefix = lstm_prefix(layer, forward);
            spec.emplace_back(prefix + "w", Shape{in, 4 * hidden});
            spec.emplace_back(prefix + "u", Shape{hidden, 4 * hidden});
            spec.emplace_back(prefix + "b", Shape{4 * hidden});
        }
    }
    spec.emplace_back("ki.w", Shape{latent, num_ki_labels});
    spec.emplace_back("crf.transitions", Shape{num_ki_labels, num_ki_labels});
    spec.emplace_back("crf.start", Shape{num_ki_labels});
    spec.emplace_back("crf.end", Shape{num_ki_labels});
    spec.emplace_back("kc.w", Shape{latent, n_kc_labels});
    spec.emplace_back("dom.w1", Shape{latent, config.disc_hidden});
    spec.emplace_back("dom.b1", Shape{config.disc_hidden});
    spec.emplace_back("dom.w2", Shape{config.disc_hidden, n_domains});
    spec.emplace_back("dom.b2", Shape{n_domains});
    return spec;
}

Model build_model(const EncoderConfig& config, const Vocabulary& vocab,
                  const KcLabelMap& kc_map, int n_domains, Rng& rng) {
    config.validate();
    if (n_domains < 2) {
        throw ConfigError("need at least 2 domains, got " +
                          std::to_string(n_domains));
    }
    Model model;
    model.config = config;
    model.n_domains = n_domains;
    model.kc_map = kc_map;
    model.vocab = vocab;

    const double lstm_limit = 1.0 / std::sqrt(double(config.lstm_hidden));
    for (const auto& [name, shape] :
         parameter_spec(config, vocab.size(), kc_map.size(), n_domains)) {
        Tensor value = Tensor::zeros(shape);
        const bool is_lstm = name.rfind("lstm", 0) == 0;
        if (name == "embedding") {
            for (std::int64_t i = 0; i < value.size(); ++i) {
                value[i] = rng.uniform(-0.1, 0.1);
            }
        } else if (is_lstm && name.back() != 'b') {
            for (std::int64_t i = 0; i < value.size(); ++i) {
                value[i] = rng.uniform(-lstm_limit, lstm_limit);
            }
        } else if (is_lstm) {
            // Bias layout i,f,g,o: start the forget gate open.
            const int hidden = config.lstm_hidden;
            for (int j = hidden; j < 2 * hidden; ++j) {
                value[j] = 1.0;
            }
        } else if (name == "ki.w" || name == "kc.w" || name == "dom.w1" ||
                   name == "dom.w2") {
            const double limit = 1.0 / std::sqrt(double(shape[0]));
            for (std::int64_t i = 0; i < value.size(); ++i) {
                value[i] = rng.uniform(-limit, limit);
            }
        }
        model.params.add(name, std::move(value));
    }
    return model;
}

LatentBatch encode(Tape& tape, const VarMap& leaves, const Model& model,
                   const EncodedBatch& batch, bool training,
                   Rng* dropout_rng) {
    const EncoderConfig& config = model.config;
    const int batch_size = batch.batch_size();
    const int max_len = batch.max_len();
    const int hidden = config.lstm_hidden;
    if (batch_size < 1 || max_len < 1) {
        throw DataError("cannot encode an empty batch");
    }

    Var embedded{};
    if (config.use_precomputed) {
        if (!batch.embeddings.has_value()) {
            throw DataError("encoder expects precomputed embeddings but the "
                            "batch carries none");
        }
        const int width = batch.embeddings->shape()[2];
        if (width != config.embedding_width) {
            throw ConfigError("precomputed embedding width " +
                              std::to_string(width) +
                              " does not match embedding_width " +
                              std::to_string(config.embedding_width));
        }
        embedded = tape.constant(
            batch.embeddings->reshaped({batch_size * max_len, width}));
    } else {
        const Var table = leaf_at(leaves, "embedding");
        std::vector<int> ids(static_cast<std::size_t>(batch_size * max_len));
        for (int b = 0; b < batch_size; ++b) {
            for (int t = 0; t < max_len; ++t) {
                ids[static_cast<std::size_t>(b * max_len + t)] =
                    batch.token_ids(b, t);
            }
        }
        embedded = gather_rows(table, std::move(ids));
    }

    std::vector<Var> mask_cols;
    std::vector<Var> inv_mask_cols;
    mask_cols.reserve(static_cast<std::size_t>(max_len));
    inv_mask_cols.reserve(static_cast<std::size_t>(max_len));
    for (int t = 0; t < max_len; ++t) {
        mask_cols.push_back(tape.constant(mask_column(batch.mask, t, false)));
        inv_mask_cols.push_back(
            tape.constant(mask_column(batch.mask, t, true)));
    }

    const bool use_dropout = training && config.dropout_rate > 0.0;
    if (use_dropout && dropout_rng == nullptr) {
        throw ConfigError("dropout is enabled but no generator was supplied");
    }
    const auto dropped = [&](Var x) {
        if (!use_dropout) return x;
        const Tensor& value = tape.value(x);
        Tensor keep = Tensor::zeros(value.shape());
        const double rate = config.dropout_rate;
        for (std::int64_t i = 0; i < keep.size(); ++i) {
            keep[i] = dropout_rng->bernoulli(1.0 - rate)
                          ? 1.0 / (1.0 - rate)
                          : 0.0;
        }
        return mul(x, tape.constant(std::move(keep)));
    };

    Var layer_input = embedded;
    for (int layer = 0; layer < config.lstm_layers; ++layer) {
        const Var fed = dropped(layer_input);
        const Var fw = run_lstm_direction(
            tape, leaves, fed, lstm_prefix(layer, true), batch_size, max_len,
            hidden, true, mask_cols, inv_mask_cols);
        const Var bw = run_lstm_direction(
            tape, leaves, fed, lstm_prefix(layer, false), batch_size, max_len,
            hidden, false, mask_cols, inv_mask_cols);
        layer_input = concat_cols({fw, bw});
    }

    const Var joined = concat_cols({embedded, layer_input});
    const Var masked =
        scale_rows(joined, tape.constant(flat_mask_column(batch.mask)));

    LatentBatch latent;
    latent.values = masked;
    latent.batch = batch_size;
    latent.max_len = max_len;
    latent.width = config.latent_width();
    return latent;
}

Var crf_negative_log_likelihood(Tape& tape, Var emissions, Var transitions,
                                Var start_scores, Var end_scores,
                                const Eigen::ArrayXXi& tags,
                                const Eigen::ArrayXXi& mask) {
    const int batch = static_cast<int>(mask.rows());
    const int max_len = static_cast<int>(mask.cols());
    const Tensor& emis_value = tape.value(emissions);
    if (emis_value.rank() != 2 || emis_value.shape()[0] != batch * max_len) {
        throw NumericError("emissions must be [batch*max_len, n_tags]");
    }
    const int n_tags = emis_value.shape()[1];
    if (tags.rows() != batch || tags.cols() != max_len) {
        throw NumericError("tags and mask shapes disagree");
    }
    const std::vector<int> lengths = row_lengths(mask);
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < lengths[static_cast<std::size_t>(b)]; ++t) {
            if (tags(b, t) < 0 || tags(b, t) >= n_tags) {
                throw DataError("tag id out of range at row " +
                                std::to_string(b));
            }
        }
    }

    // Forward recursion in log space. alpha holds, per document, the
    // log-sum over prefix paths ending in each tag at that document's
    // current position; rows freeze via the mask once a document ends.
    Var alpha = add_rowwise(
        gather_rows(emissions, rows_at_time(batch, max_len, 0)),
        start_scores);
    for (int t = 1; t < max_len; ++t) {
        std::vector<Var> columns;
        columns.reserve(static_cast<std::size_t>(n_tags));
        for (int j = 0; j < n_tags; ++j) {
            const Var into_j =
                reshape(slice_cols(transitions, j, 1), {n_tags});
            columns.push_back(logsumexp_rows(add_rowwise(alpha, into_j)));
        }
        const Var next = add(
            concat_cols(columns),
            gather_rows(emissions, rows_at_time(batch, max_len, t)));
        const Var m = tape.constant(mask_column(mask, t, false));
        const Var inv = tape.constant(mask_column(mask, t, true));
        alpha = add(scale_rows(next, m), scale_rows(alpha, inv));
    }
    const Var log_z_total =
        sum(logsumexp_rows(add_rowwise(alpha, end_scores)));

    // Gold path score, summed over the batch, via flat gathers.
    std::vector<int> emit_idx;
    std::vector<int> trans_idx;
    std::vector<int> start_idx(static_cast<std::size_t>(batch));
    std::vector<int> end_idx(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        const int len = lengths[static_cast<std::size_t>(b)];
        start_idx[static_cast<std::size_t>(b)] = tags(b, 0);
        end_idx[static_cast<std::size_t>(b)] = tags(b, len - 1);
        for (int t = 0; t < len; ++t) {
            emit_idx.push_back((b * max_len + t) * n_tags + tags(b, t));
            if (t > 0) {
                trans_idx.push_back(tags(b, t - 1) * n_tags + tags(b, t));
            }
        }
    }
    const Var emis_flat =
        reshape(emissions, {batch * max_len * n_tags, 1});
    Var gold = sum(gather_rows(emis_flat, std::move(emit_idx)));
    if (!trans_idx.empty()) {
        const Var trans_flat = reshape(transitions, {n_tags * n_tags, 1});
        gold = add(gold, sum(gather_rows(trans_flat, std::move(trans_idx))));
    }
    const Var start_col = reshape(start_scores, {n_tags, 1});
    gold = add(gold, sum(gather_rows(start_col, std::move(start_idx))));
    const Var end_col = reshape(end_scores, {n_tags, 1});
    gold = add(gold, sum(gather_rows(end_col, std::move(end_idx))));

    return scale(sub(log_z_total, gold), 1.0 / static_cast<double>(batch));
}

Var tag_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
             const EncodedBatch& batch, bool hard_o_to_i) {
    const Var emissions = matmul(latent.values, leaf_at(leaves, "ki.w"));
    Var transitions = leaf_at(leaves, "crf.transitions");
    if (hard_o_to_i) {
        transitions = apply_hard_o_to_i(tape, transitions);
    }
    return crf_negative_log_likelihood(
        tape, emissions, transitions, leaf_at(leaves, "crf.start"),
        leaf_at(leaves, "crf.end"), batch.ki_labels, batch.mask);
}

Var kc_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
            const EncodedBatch& batch) {
    const Var logits = matmul(latent.values, leaf_at(leaves, "kc.w"));
    const int n_labels = tape.value(logits).shape()[1];
    const Var logp = log_softmax_rows(logits);

    std::vector<int> gold_idx;
    for (int b = 0; b < latent.batch; ++b) {
        for (int t = 0; t < latent.max_len; ++t) {
            if (batch.mask(b, t) != 1) continue;
            const int label = batch.kc_labels(b, t);
            if (label < 0 || label >= n_labels) {
                throw DataError("KC label id out of range at row " +
                                std::to_string(b));
            }
            gold_idx.push_back((b * latent.max_len + t) * n_labels + label);
        }
    }
    if (gold_idx.empty()) {
        throw DataError("kc_loss: batch has no unmasked tokens");
    }
    const double count = static_cast<double>(gold_idx.size());
    const Var flat =
        reshape(logp, {latent.batch * latent.max_len * n_labels, 1});
    return scale(sum(gather_rows(flat, std::move(gold_idx))), -1.0 / count);
}

Var domain_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
                const EncodedBatch& batch, int n_domains, double reversal) {
    if (n_domains < 2) {
        throw ConfigError("domain discrimination needs at least 2 domains");
    }
    const int batch_size = latent.batch;
    const std::vector<int> lengths = row_lengths(batch.mask);

    Tensor pool = Tensor::zeros({batch_size, batch_size * latent.max_len});
    for (int b = 0; b < batch_size; ++b) {
        const double len =
            static_cast<double>(lengths[static_cast<std::size_t>(b)]);
        for (int t = 0; t < latent.max_len; ++t) {
            if (batch.mask(b, t) == 1) {
                pool[static_cast<std::int64_t>(b) *
                         (batch_size * latent.max_len) +
                     b * latent.max_len + t] = 1.0 / len;
            }
        }
    }
    const Var pooled = matmul(tape.constant(std::move(pool)), latent.values);
    const Var reversed = grad_scale(pooled, reversal);
    const Var hidden_out =
        tanh(add_rowwise(matmul(reversed, leaf_at(leaves, "dom.w1")),
                         leaf_at(leaves, "dom.b1")));
    const Var logits =
        add_rowwise(matmul(hidden_out, leaf_at(leaves, "dom.w2")),
                    leaf_at(leaves, "dom.b2"));
    const Var logp = log_softmax_rows(logits);

    std::vector<int> gold_idx(static_cast<std::size_t>(batch_size));
    for (int b = 0; b < batch_size; ++b) {
        const int label = batch.domain_labels(b);
        if (label < 0 || label >= n_domains) {
            throw DataError("domain label out of range for document " +
                            std::to_string(b));
        }
        gold_idx[static_cast<std::size_t>(b)] = b * n_domains + label;
    }
    const Var flat = reshape(logp, {batch_size * n_domains, 1});
    return scale(sum(gather_rows(flat, std::move(gold_idx))),
                 -1.0 / static_cast<double>(batch_size));
}

std::vector<int> crf_decode(const RowMajorMatrix& emissions,
                            const RowMajorMatrix& transitions,
                            const Eigen::VectorXd& start_scores,
                            const Eigen::VectorXd& end_scores) {
    const int len = static_cast<int>(emissions.rows());
    const int n_tags = static_cast<int>(emissions.cols());
    if (len < 1) {
        throw DataError("crf_decode: zero-length sequence");
    }
    if (transitions.rows() != n_tags || transitions.cols() != n_tags ||
        start_scores.size() != n_tags || end_scores.size() != n_tags) {
        throw NumericError("crf_decode: inconsistent tag counts");
    }

    RowMajorMatrix delta(len, n_tags);
    Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        backptr(len, n_tags);
    for (int j = 0; j < n_tags; ++j) {
        delta(0, j) = start_scores(j) + emissions(0, j);
    }
    for (int t = 1; t < len; ++t) {
        for (int j = 0; j < n_tags; ++j) {
            int best_i = 0;
            double best = delta(t - 1, 0) + transitions(0, j);
            for (int i = 1; i < n_tags; ++i) {
                const double score = delta(t - 1, i) + transitions(i, j);
                if (score > best) {
                    best = score;
                    best_i = i;
                }
            }
            delta(t, j) = best + emissions(t, j);
            backptr(t, j) = best_i;
        }
    }
    int tag = 0;
    double best = delta(len - 1, 0) + end_scores(0);
    for (int j = 1; j < n_tags; ++j) {
        const double score = delta(len - 1, j) + end_scores(j);
        if (score > best) {
            best = score;
            tag = j;
        }
    }
    std::vector<int> path(static_cast<std::size_t>(len));
    path[static_cast<std::size_t>(len - 1)] = tag;
    for (int t = len - 1; t > 0; --t) {
        tag = backptr(t, tag);
        path[static_cast<std::size_t>(t - 1)] = tag;
    }
    return path;
}

RowMajorMatrix effective_transitions(const Model& model) {
    const Tensor& raw = model.params.value("crf.transitions");
    RowMajorMatrix transitions(num_ki_labels, num_ki_labels);
    for (int i = 0; i < num_ki_labels; ++i) {
        for (int j = 0; j < num_ki_labels; ++j) {
            transitions(i, j) = raw[i * num_ki_labels + j];
        }
    }
    if (model.config.hard_o_to_i) {
        transitions(static_cast<int>(Bio::outside),
                    static_cast<int>(Bio::inside)) = o_to_i_penalty;
    }
    return transitions;
}

Prediction predict(const Model& model, const EncodedBatch& batch) {
    Tape tape;
    VarMap constants;
    for (const std::string& name : model.params.names()) {
        constants[name] = tape.constant(model.params.value(name));
    }
    const LatentBatch latent =
        encode(tape, constants, model, batch, false, nullptr);
    const Var emissions =
        matmul(latent.values, constants.at("ki.w"));
    const Var kc_logits =
        matmul(latent.values, constants.at("kc.w"));
    const Tensor& emis = tape.value(emissions);
    const Tensor& logits = tape.value(kc_logits);
    const int n_labels = logits.shape()[1];

    const RowMajorMatrix transitions = effective_transitions(model);
    Eigen::VectorXd start_scores(num_ki_labels);
    Eigen::VectorXd end_scores(num_ki_labels);
    for (int j = 0; j < num_ki_labels; ++j) {
        start_scores(j) = model.params.value("crf.start")[j];
        end_scores(j) = model.params.value("crf.end")[j];
    }

    Prediction out;
    for (int b = 0; b < batch.batch_size(); ++b) {
        const int len = batch.lengths[static_cast<std::size_t>(b)];
        RowMajorMatrix doc_emissions(len, num_ki_labels);
        for (int t = 0; t < len; ++t) {
            for (int j = 0; j < num_ki_labels; ++j) {
                doc_emissions(t, j) =
                    emis[(b * batch.max_len() + t) * num_ki_labels + j];
            }
        }
        out.ki.push_back(crf_decode(doc_emissions, transitions, start_scores,
                                    end_scores));
        std::vector<int> kc_path(static_cast<std::size_t>(len), 0);
        for (int t = 0; t < len; ++t) {
            const std::int64_t base =
                static_cast<std::int64_t>(b * batch.max_len() + t) * n_labels;
            int best = 0;
            for (int c = 1; c < n_labels; ++c) {
                if (logits[base + c] > logits[base + best]) best = c;
            }
            kc_path[static_cast<std::size_t>(t)] = best;
        }
        out.kc.push_back(std::move(kc_path));
    }
    return out;
}

void save_model(const Model& model, const std::string& path) {
    Container container{"model", model_format_version};
    container.set_int("embedding_width", model.config.embedding_width);
    container.set_int("lstm_hidden", model.config.lstm_hidden);
    container.set_int("lstm_layers", model.config.lstm_layers);
    container.set_int("disc_hidden", model.config.disc_hidden);
    container.set_int("use_precomputed", model.config.use_precomputed ? 1 : 0);
    container.set_double("dropout_rate", model.config.dropout_rate);
    container.set_int("hard_o_to_i", model.config.hard_o_to_i ? 1 : 0);
    container.set_int("n_domains", model.n_domains);
    const std::vector<std::string>& labels = model.kc_map.names();
    for (std::size_t i = 1; i < labels.size(); ++i) {
        container.set("type", labels[i]);
    }
    for (const std::string& token : model.vocab.real_tokens()) {
        container.set("token", token);
    }
    for (const std::string& name : model.params.names()) {
        container.add_array(name, model.params.value(name));
    }
    container.save_file(path);
}

Model load_model(const std::string& path) {
    const Container container = Container::load_file(path, "model");
    if (container.version() != model_format_version) {
        throw CheckpointError("unsupported model format version " +
                              std::to_string(container.version()));
    }
    Model model;
    model.config.embedding_width =
        static_cast<int>(container.get_int("embedding_width"));
    model.config.lstm_hidden =
        static_cast<int>(container.get_int("lstm_hidden"));
    model.config.lstm_layers =
        static_cast<int>(container.get_int("lstm_layers"));
    model.config.disc_hidden =
        static_cast<int>(container.get_int("disc_hidden"));
    model.config.use_precomputed = container.get_int("use_precomputed") != 0;
    model.config.dropout_rate = container.get_double("dropout_rate");
    model.config.hard_o_to_i = container.get_int("hard_o_to_i") != 0;
    model.n_domains = static_cast<int>(container.get_int("n_domains"));
    try {
        model.config.validate();
        model.kc_map = KcLabelMap{container.get_all("type")};
        for (const std::string& token : container.get_all("token")) {
            model.vocab.add(token);
        }
        model.vocab.freeze();
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string{"checkpoint invalid: "} + e.what());
    } catch (const DataError& e) {
        throw CheckpointError(std::string{"checkpoint invalid: "} + e.what());
    }

    const auto spec =
        parameter_spec(model.config, model.vocab.size(), model.kc_map.size(),
                       model.n_domains);
    if (container.array_names().size() != spec.size()) {
        throw CheckpointError(
            "checkpoint holds " +
            std::to_string(container.array_names().size()) +
            " parameter arrays, expected " + std::to_string(spec.size()));
    }
    for (const auto& [name, shape] : spec) {
        if (!container.has_array(name)) {
            throw CheckpointError("checkpoint is missing parameter '" + name +
                                  "'");
        }
        const Tensor& value = container.array(name);
        if (value.shape() != shape) {
            throw CheckpointError("parameter '" + name + "' has shape " +
                                  shape_to_string(value.shape()) +
                                  ", expected " + shape_to_string(shape));
        }
        if (!value.all_finite()) {
            throw CheckpointError("parameter '" + name +
                                  "' holds non-finite values");
        }
        model.params.add(name, value);
    }
    return model;
}

} // namespace keytag
