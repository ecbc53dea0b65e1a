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

#ifndef KEYTAG_TRAIN_HPP
#define KEYTAG_TRAIN_HPP

#include "keytag/corpus.hpp"
#include "keytag/evaluate.hpp"
#include "keytag/model.hpp"
#include "keytag/rng.hpp"
#include "keytag/tape.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace keytag {

enum class OptimizerKind { sgd, momentum, adam };

OptimizerKind optimizer_from_string(const std::string& name); // ConfigError
std::string optimizer_name(OptimizerKind kind);

struct TrainConfig {
    int epochs = 1;
    int batch_size = 8;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double lambda = 0.1;       // weight of the domain loss
    double epsilon = 0.01;     // perturbation radius
    bool adversarial_enabled = true;
    unsigned long long seed = 0;
    double gradient_clip_norm = 5.0;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const; // ConfigError on out-of-range fields
};

struct StepReport {
    long long step = 0;
    double l_tag = 0.0;
    double l_class = 0.0;
    double l_da = 0.0;
    double l_total = 0.0;
    std::optional<double> l_total_adv; // absent when adversarial is off
    double gradient_norm = 0.0;        // global norm before clipping
};

/// l_tag + l_class + lambda * l_da; rejects non-finite inputs.
double total_loss(double l_tag, double l_class, double l_da, double lambda);

/// x_adv = x + epsilon * sign(g) with sign(0) = 0, recorded on the same
/// tape as a constant offset of the latent so the perturbation itself is
/// not differentiated through.
LatentBatch fgsm_perturb(Tape& tape, const LatentBatch& latent,
                         const Tensor& latent_gradient, double epsilon);

/// Stateful parameter updater. Slot state is keyed by parameter name, so
/// one instance must stay with one model across steps.
class Optimizer {
  public:
    Optimizer(OptimizerKind kind, const TrainConfig& config);

    /// Applies one update from the store's gradient slots.
    void step(ParameterStore& params);
    long long steps_taken() const { return t_; }

  private:
    OptimizerKind kind_;
    double learning_rate_;
    double momentum_;
    double beta1_;
    double beta2_;
    double epsilon_;
    long long t_ = 0;
    std::map<std::string, Tensor> first_moment_;
    std::map<std::string, Tensor> second_moment_;
};

/// Euclidean norm over all gradient slots taken together.
double global_gradient_norm(const ParameterStore& params);

/// Rescales all gradients to max_norm when the global norm exceeds it.
/// Returns the norm before clipping.
double clip_gradients(ParameterStore& params, double max_norm);

/// One optimization step: clean pass, optional FGSM pass, backward through
/// the summed objective, clip, update. rng drives dropout. Non-finite
/// losses abort the step with the known components in the message.
StepReport train_step(Model& model, const EncodedBatch& batch,
                      const TrainConfig& config, Optimizer& optimizer,
                      Rng& rng, long long step_index);

struct EpochLog {
    int epoch = 0; // 1-based
    double l_tag = 0.0;
    double l_class = 0.0;
    double l_da = 0.0;
    double l_total = 0.0;
    std::optional<double> l_total_adv;
    double dev_ki_f1 = 0.0;
    double dev_kic_f1 = 0.0;
    bool has_dev = false;
};

/// TAB-separated metric line: epoch, l_tag, l_class, l_da, l_total,
/// l_total_adv, dev_KI_F1, dev_KIC_F1. Absent values print as "-".
std::string format_metric_line(const EpochLog& log);

/// Batched eval-mode scores on a labeled corpus. Domain labels are zeros:
/// decoding never reads them.
EvalResult evaluate_model(const Model& model,
                          const std::vector<TaggedDocument>& docs,
                          int batch_size);

struct TrainResult {
    Model model; // parameters of the best dev epoch (final when no dev set)
    std::vector<EpochLog> log;
    int best_epoch = 0; // 1-based, 0 when nothing was selected
    double best_dev_kic = -1.0;
};

/// Full training loop: seeded shuffling per epoch, per-epoch checkpoints
/// under checkpoint_dir (skipped when empty), dev evaluation after every
/// epoch, best-model tracking by dev KIC F1. metric_stream, when non-null,
/// receives one format_metric_line per epoch as it completes.
TrainResult train(const Model& initial,
                  const std::vector<TaggedDocument>& train_docs,
                  const std::map<std::string, int>& domains,
                  const std::vector<TaggedDocument>& dev_docs,
                  const TrainConfig& config,
                  const std::string& checkpoint_dir = std::string(),
                  std::ostream* metric_stream = nullptr);

} // namespace keytag

#endif // KEYTAG_TRAIN_HPP
