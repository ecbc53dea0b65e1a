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

#ifndef KEYTAG_MODEL_HPP
#define KEYTAG_MODEL_HPP

#include "keytag/corpus.hpp"
#include "keytag/rng.hpp"
#include "keytag/tape.hpp"
#include "keytag/tensor.hpp"

#include <string>
#include <utility>
#include <vector>

namespace keytag {

/// Sizes and switches of the shared encoder and its attached heads.
struct EncoderConfig {
    int embedding_width = 64;
    int lstm_hidden = 64;
    int lstm_layers = 2;
    int disc_hidden = 32;
    bool use_precomputed = false;
    double dropout_rate = 0.0;
    bool hard_o_to_i = false; // pin the O->I transition score to -1e4

    int latent_width() const { return embedding_width + 2 * lstm_hidden; }
    void validate() const; // ConfigError on out-of-range fields
};

/// Trainable state plus everything needed to interpret it: vocabulary, type
/// inventory, domain count. This is the unit a checkpoint stores.
struct Model {
    EncoderConfig config;
    int n_domains = 0;
    KcLabelMap kc_map;
    Vocabulary vocab;
    ParameterStore params;
};

/// Canonical parameter names and shapes for a configuration, in
/// initialization order. Shared by construction and checkpoint validation.
///
/// Names: embedding | lstm<l>.<fw|bw>.{w,u,b} | ki.w |
///        crf.{transitions,start,end} | kc.w | dom.{w1,b1,w2,b2}
/// LSTM gate blocks are ordered input, forget, candidate, output along the
/// 4*hidden axis.
std::vector<std::pair<std::string, Shape>> parameter_spec(
    const EncoderConfig& config, int vocab_size, int n_kc_labels,
    int n_domains);

/// Fresh model with seeded initialization: LSTM weights uniform in
/// +-1/sqrt(hidden) with forget bias 1, head weights uniform in
/// +-1/sqrt(fan_in), embeddings uniform in +-0.1, CRF scores and biases 0.
Model build_model(const EncoderConfig& config, const Vocabulary& vocab,
                  const KcLabelMap& kc_map, int n_domains, Rng& rng);

/// Per-token shared representation on the tape. Rows are batch-major:
/// document b, position t lives in row b*max_len + t. Columns are the
/// embedding block (width E) then forward then backward final-layer LSTM
/// states (width H each). Rows at masked positions are exactly zero.
struct LatentBatch {
    Var values; // [batch*max_len, width]
    int batch = 0;
    int max_len = 0;
    int width = 0;
};

/// Runs embedding lookup (or the precomputed block) and the BiLSTM stack.
/// Dropout applies to each LSTM layer's input, only when training is true
/// and the rate is positive; dropout_rng must then be non-null.
LatentBatch encode(Tape& tape, const VarMap& leaves, const Model& model,
                   const EncodedBatch& batch, bool training,
                   Rng* dropout_rng = nullptr);

/// Mean over documents of [log Z - gold path score] for a linear-chain CRF,
/// fully on the tape. emissions is [batch*max_len, n_tags] batch-major;
/// tags/mask are [batch, max_len] with every row holding at least one
/// unmasked position.
Var crf_negative_log_likelihood(Tape& tape, Var emissions, Var transitions,
                                Var start_scores, Var end_scores,
                                const Eigen::ArrayXXi& tags,
                                const Eigen::ArrayXXi& mask);

/// KI head: emission projection plus the CRF likelihood above, with the
/// O->I hard mask applied when configured.
Var tag_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
             const EncodedBatch& batch, bool hard_o_to_i);

/// KC head: mean over unmasked tokens of the softmax cross-entropy of
/// latent * kc.w against the gold type labels.
Var kc_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
            const EncodedBatch& batch);

/// Domain head: mask-weighted mean pooling per document, gradient reversal,
/// one tanh hidden layer, softmax over n_domains; mean cross-entropy.
/// reversal is the factor the reversal layer applies to gradients flowing
/// back into the latent: -1 is the real layer, +1 degrades it to identity
/// (used to test the sign contract).
Var domain_loss(Tape& tape, const VarMap& leaves, const LatentBatch& latent,
                const EncodedBatch& batch, int n_domains,
                double reversal = -1.0);

/// Viterbi decode of one sequence; score ties are broken toward the smaller
/// tag index at every backtracking step.
std::vector<int> crf_decode(const RowMajorMatrix& emissions,
                            const RowMajorMatrix& transitions,
                            const Eigen::VectorXd& start_scores,
                            const Eigen::VectorXd& end_scores);

/// Tag-id sequences per document from a full forward pass in eval mode.
struct Prediction {
    std::vector<std::vector<int>> ki; // Bio values as ints
    std::vector<std::vector<int>> kc; // KcLabelMap ids
};
Prediction predict(const Model& model, const EncodedBatch& batch);

/// CRF score matrices with the O->I hard mask applied when configured.
RowMajorMatrix effective_transitions(const Model& model);

void save_model(const Model& model, const std::string& path);
Model load_model(const std::string& path);

} // namespace keytag

#endif // KEYTAG_MODEL_HPP
