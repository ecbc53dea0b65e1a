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

#include "keytag/train.hpp"

#include "keytag/errors.hpp"
#include "keytag/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <sstream>

namespace keytag {

OptimizerKind optimizer_from_string(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "momentum") return OptimizerKind::momentum;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name +
                      "' (expected sgd, momentum or adam)");
}

std::string optimizer_name(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::momentum: return "momentum";
    case OptimizerKind::adam: return "adam";
    }
    throw ConfigError("invalid optimizer value");
}

void TrainConfig::validate() const {
    if (epochs < 1) {
        throw ConfigError("train: epochs must be at least 1");
    }
    if (batch_size < 1) {
        throw ConfigError("train: batch_size must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("train: learning_rate must be positive");
    }
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw ConfigError("train: lambda must be >= 0");
    }
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw ConfigError("train: epsilon must be >= 0");
    }
    if (!(gradient_clip_norm > 0.0)) {
        throw ConfigError("train: gradient_clip_norm must be positive");
    }
    if (!(momentum >= 0.0) || momentum >= 1.0) {
        throw ConfigError("train: momentum must be in [0, 1)");
    }
    if (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0 || !(adam_beta2 >= 0.0) ||
        adam_beta2 >= 1.0) {
        throw ConfigError("train: adam betas must be in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) {
        throw ConfigError("train: adam_epsilon must be positive");
    }
}

double total_loss(double l_tag, double l_class, double l_da, double lambda) {
    if (!std::isfinite(l_tag) || !std::isfinite(l_class) ||
        !std::isfinite(l_da) || !std::isfinite(lambda)) {
        throw NumericError("total_loss: non-finite input");
    }
    return l_tag + l_class + lambda * l_da;
}

LatentBatch fgsm_perturb(Tape& tape, const LatentBatch& latent,
                         const Tensor& latent_gradient, double epsilon) {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
        throw ConfigError("fgsm: epsilon must be >= 0");
    }
    if (!latent_gradient.all_finite()) {
        throw NumericError("fgsm: non-finite latent gradient");
    }
    const Tensor& values = tape.value(latent.values);
    if (!latent_gradient.same_shape(values)) {
        throw NumericError("fgsm: gradient shape does not match the latent");
    }
    Tensor offset(values.shape());
    offset.array() =
        epsilon * ((latent_gradient.array() > 0.0).cast<double>() -
                   (latent_gradient.array() < 0.0).cast<double>());
    LatentBatch adv;
    adv.values = add(latent.values, tape.constant(std::move(offset)));
    adv.batch = latent.batch;
    adv.max_len = latent.max_len;
    adv.width = latent.width;
    return adv;
}

Optimizer::Optimizer(OptimizerKind kind, const TrainConfig& config)
    : kind_(kind),
      learning_rate_(config.learning_rate),
      momentum_(config.momentum),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      epsilon_(config.adam_epsilon) {}

void Optimizer::step(ParameterStore& params) {
    ++t_;
    for (const std::string& name : params.names()) {
        Tensor& value = params.value(name);
        const Tensor& grad = params.grad(name);
        if (!grad.all_finite()) {
            throw NumericError("optimizer: non-finite gradient for '" +
                               name + "'");
        }
        switch (kind_) {
        case OptimizerKind::sgd:
            value.array() -= learning_rate_ * grad.array();
            break;
        case OptimizerKind::momentum: {
            auto [it, fresh] =
                first_moment_.try_emplace(name, Tensor::zeros(value.shape()));
            Tensor& velocity = it->second;
            velocity.array() =
                momentum_ * velocity.array() + grad.array();
            value.array() -= learning_rate_ * velocity.array();
            break;
        }
        case OptimizerKind::adam: {
            auto [mit, mfresh] =
                first_moment_.try_emplace(name, Tensor::zeros(value.shape()));
            auto [vit, vfresh] = second_moment_.try_emplace(
                name, Tensor::zeros(value.shape()));
            Tensor& m = mit->second;
            Tensor& v = vit->second;
            m.array() = beta1_ * m.array() + (1.0 - beta1_) * grad.array();
            v.array() = beta2_ * v.array() +
                        (1.0 - beta2_) * grad.array().square();
            const double m_correction =
                1.0 - std::pow(beta1_, static_cast<double>(t_));
            const double v_correction =
                1.0 - std::pow(beta2_, static_cast<double>(t_));
            value.array() -=
                learning_rate_ * (m.array() / m_correction) /
                ((v.array() / v_correction).sqrt() + epsilon_);
            break;
        }
        }
    }
}

double global_gradient_norm(const ParameterStore& params) {
    double sum_squares = 0.0;
    for (const std::string& name : params.names()) {
        sum_squares += params.grad(name).array().square().sum();
    }
    return std::sqrt(sum_squares);
}

double clip_gradients(ParameterStore& params, double max_norm) {
    if (!(max_norm > 0.0)) {
        throw ConfigError("clip_gradients: max_norm must be positive");
    }
    const double norm = global_gradient_norm(params);
    if (!std::isfinite(norm)) {
        throw NumericError("clip_gradients: non-finite gradient norm");
    }
    if (norm > max_norm) {
        const double factor = max_norm / norm;
        for (const std::string& name : params.names()) {
            params.grad(name).array() *= factor;
        }
    }
    return norm;
}

StepReport train_step(Model& model, const EncodedBatch& batch,
                      const TrainConfig& config, Optimizer& optimizer,
                      Rng& rng, long long step_index) {
    StepReport report;
    report.step = step_index;
    ParameterStore& params = model.params;
    Tape tape;
    VarMap leaves = make_leaves(tape, params);
    try {
        LatentBatch latent =
            encode(tape, leaves, model, batch, /*training=*/true, &rng);
        Var l_tag = tag_loss(tape, leaves, latent, batch,
                             model.config.hard_o_to_i);
        Var l_class = kc_loss(tape, leaves, latent, batch);
        Var l_da = domain_loss(tape, leaves, latent, batch, model.n_domains);
        Var l_total =
            add(add(l_tag, l_class), scale(l_da, config.lambda));
        report.l_tag = tape.value(l_tag).scalar_value();
        report.l_class = tape.value(l_class).scalar_value();
        report.l_da = tape.value(l_da).scalar_value();
        report.l_total = tape.value(l_total).scalar_value();
        const double recomposed = total_loss(report.l_tag, report.l_class,
                                             report.l_da, config.lambda);
        if (std::abs(report.l_total - recomposed) > 1e-9) {
            throw NumericError("train: loss recomposition drifted by " +
                               std::to_string(report.l_total - recomposed));
        }

        Var objective = l_total;
        if (config.adversarial_enabled) {
            tape.backward(l_total);
            const Tensor latent_gradient = tape.grad(latent.values);
            LatentBatch adv =
                fgsm_perturb(tape, latent, latent_gradient, config.epsilon);
            Var a_tag = tag_loss(tape, leaves, adv, batch,
                                 model.config.hard_o_to_i);
            Var a_class = kc_loss(tape, leaves, adv, batch);
            Var a_da =
                domain_loss(tape, leaves, adv, batch, model.n_domains);
            Var l_total_adv =
                add(add(a_tag, a_class), scale(a_da, config.lambda));
            report.l_total_adv = tape.value(l_total_adv).scalar_value();
            objective = add(l_total, l_total_adv);
        }
        tape.backward(objective);
        params.zero_grads();
        for (const std::string& name : params.names()) {
            params.grad(name) = tape.grad(leaves.at(name));
        }
    } catch (const NumericError& err) {
        std::ostringstream message;
        message << "train step " << step_index
                << " aborted: " << err.what() << " (l_tag=" << report.l_tag
                << ", l_class=" << report.l_class
                << ", l_da=" << report.l_da << ")";
        throw NumericError(message.str());
    }
    report.gradient_norm =
        clip_gradients(params, config.gradient_clip_norm);
    optimizer.step(params);
    return report;
}

namespace {

std::string format_fixed(double value, int decimals) {
    char buffer[48];
    std::snprintf(buffer, sizeof(buffer), "%.*f", decimals, value);
    return buffer;
}

} // namespace

EvalResult evaluate_model(const Model& model,
                          const std::vector<TaggedDocument>& docs,
                          int batch_size) {
    Prediction all;
    std::vector<const TaggedDocument*> pointers = doc_pointers(docs);
    for (std::size_t offset = 0; offset < pointers.size();
         offset += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(
            pointers.size(), offset + static_cast<std::size_t>(batch_size));
        std::vector<const TaggedDocument*> chunk(
            pointers.begin() + static_cast<std::ptrdiff_t>(offset),
            pointers.begin() + static_cast<std::ptrdiff_t>(end));
        // Domain labels are irrelevant at decode time; zeros keep the
        // batch encoder satisfied.
        EncodedBatch batch =
            encode_batch(chunk, model.vocab,
                         std::vector<int>(chunk.size(), 0), model.kc_map,
                         model.n_domains);
        Prediction part = predict(model, batch);
        for (auto& seq : part.ki) all.ki.push_back(std::move(seq));
        for (auto& seq : part.kc) all.kc.push_back(std::move(seq));
    }
    return evaluate_predictions(docs, all, model.kc_map);
}

std::string format_metric_line(const EpochLog& log) {
    std::string line = std::to_string(log.epoch);
    line += '\t' + format_fixed(log.l_tag, 6);
    line += '\t' + format_fixed(log.l_class, 6);
    line += '\t' + format_fixed(log.l_da, 6);
    line += '\t' + format_fixed(log.l_total, 6);
    line += '\t';
    line += log.l_total_adv ? format_fixed(*log.l_total_adv, 6) : "-";
    line += '\t';
    line += log.has_dev ? format_fixed(log.dev_ki_f1, 4) : "-";
    line += '\t';
    line += log.has_dev ? format_fixed(log.dev_kic_f1, 4) : "-";
    return line;
}

TrainResult train(const Model& initial,
                  const std::vector<TaggedDocument>& train_docs,
                  const std::map<std::string, int>& domains,
                  const std::vector<TaggedDocument>& dev_docs,
                  const TrainConfig& config,
                  const std::string& checkpoint_dir,
                  std::ostream* metric_stream) {
    config.validate();
    if (train_docs.empty()) {
        throw DataError("train: empty training corpus");
    }
    std::vector<int> doc_domains;
    doc_domains.reserve(train_docs.size());
    for (const TaggedDocument& doc : train_docs) {
        auto it = domains.find(doc.doc_id);
        if (it == domains.end()) {
            throw DataError("train: no domain label for document '" +
                            doc.doc_id + "'");
        }
        if (it->second >= initial.n_domains) {
            throw DataError("train: domain label " +
                            std::to_string(it->second) + " for '" +
                            doc.doc_id + "' is outside " +
                            std::to_string(initial.n_domains) + " domains");
        }
        doc_domains.push_back(it->second);
    }
    if (!checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
    }

    TrainResult result;
    result.model = initial;
    Model& model = result.model;
    Optimizer optimizer(config.optimizer, config);
    Rng rng(config.seed);

    Model best = model;
    long long step_index = 0;
    std::vector<std::size_t> order(train_docs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_tag = 0.0;
        double sum_class = 0.0;
        double sum_da = 0.0;
        double sum_total = 0.0;
        double sum_adv = 0.0;
        long long docs_seen = 0;
        for (std::size_t offset = 0; offset < order.size();
             offset += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(),
                         offset + static_cast<std::size_t>(config.batch_size));
            std::vector<const TaggedDocument*> chunk;
            std::vector<int> chunk_domains;
            for (std::size_t i = offset; i < end; ++i) {
                chunk.push_back(&train_docs[order[i]]);
                chunk_domains.push_back(
                    doc_domains[order[i]]);
            }
            EncodedBatch batch =
                encode_batch(chunk, model.vocab, chunk_domains, model.kc_map,
                             model.n_domains);
            StepReport report = train_step(model, batch, config, optimizer,
                                           rng, step_index);
            ++step_index;
            const double weight = static_cast<double>(chunk.size());
            sum_tag += weight * report.l_tag;
            sum_class += weight * report.l_class;
            sum_da += weight * report.l_da;
            sum_total += weight * report.l_total;
            if (report.l_total_adv) {
                sum_adv += weight * *report.l_total_adv;
            }
            docs_seen += static_cast<long long>(chunk.size());
        }

        EpochLog log;
        log.epoch = epoch;
        const double denom = static_cast<double>(docs_seen);
        log.l_tag = sum_tag / denom;
        log.l_class = sum_class / denom;
        log.l_da = sum_da / denom;
        log.l_total = sum_total / denom;
        if (config.adversarial_enabled) {
            log.l_total_adv = sum_adv / denom;
        }
        // The epoch's training work is complete here; persist it before the
        // dev pass so an evaluation failure cannot lose the checkpoint.
        if (!checkpoint_dir.empty()) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%04d.ckpt", epoch);
            save_model(model, checkpoint_dir + "/" + name);
        }
        if (!dev_docs.empty()) {
            EvalResult dev =
                evaluate_model(model, dev_docs, config.batch_size);
            log.has_dev = true;
            log.dev_ki_f1 = dev.ki.f1;
            log.dev_kic_f1 = dev.kic.f1;
            if (dev.kic.f1 > result.best_dev_kic) {
                result.best_dev_kic = dev.kic.f1;
                result.best_epoch = epoch;
                best = model;
                if (!checkpoint_dir.empty()) {
                    save_model(best, checkpoint_dir + "/best.ckpt");
                }
            }
        }
        result.log.push_back(log);
        if (metric_stream != nullptr) {
            (*metric_stream) << format_metric_line(log) << '\n';
            metric_stream->flush();
        }
    }

    if (dev_docs.empty()) {
        result.best_epoch = config.epochs;
        best = model;
    }
    if (!checkpoint_dir.empty()) {
        save_model(best, checkpoint_dir + "/final.ckpt");
    }
    result.model = best;
    return result;
}

} // namespace keytag
