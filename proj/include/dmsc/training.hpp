// Copyright 2026 the dmsc authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dmsc/data_io.hpp"
#include "dmsc/kvconfig.hpp"
#include "dmsc/model.hpp"

namespace dmsc {

// ---------------------------------------------------------------------------
// Additive angular margin softmax
// ---------------------------------------------------------------------------

/// Cross entropy over scaled cosine logits with the margin added to the
/// target angle: logit_y = scale * cos(theta_y + margin), others
/// scale * cos(theta_j). Cosines are clamped to [-1+1e-7, 1-1e-7] before the
/// angle shift. Embeddings arrive as columns [embed_dim x B]; class weights
/// are rows of [num_classes x embed_dim], L2-normalized at use. With
/// margin = 0 and scale = 1 this reduces exactly to softmax cross entropy
/// over cosine similarities.
inline VarPtr aam_loss(const VarPtr& embeddings, const std::vector<std::size_t>& labels,
                       const VarPtr& class_weight, double margin, double scaling) {
    const std::size_t batch = embeddings->value.cols();
    const std::size_t num_classes = class_weight->value.rows();
    if (labels.size() != batch) {
        throw DimError("aam_loss: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(batch) + " embeddings");
    }
    for (std::size_t lab : labels) {
        if (lab >= num_classes) {
            throw ConfigError("aam_loss: label " + std::to_string(lab) + " out of range [0, " +
                              std::to_string(num_classes) + ")");
        }
    }

    auto wn = div_rowvec(class_weight,
                         dmsc::sqrt(add_scalar(sum_axis(mul(class_weight, class_weight), 1),
                                               kEps)));
    auto en = div_colvec(embeddings,
                         dmsc::sqrt(add_scalar(sum_axis(mul(embeddings, embeddings), 0), kEps)));
    auto cosine = clamp(matmul(wn, en), -1.0 + 1e-7, 1.0 - 1e-7);  // [L x B]

    auto target_cos = gather_per_col(cosine, labels);  // [B]
    auto sin_t = dmsc::sqrt(add_scalar(scale(mul(target_cos, target_cos), -1.0), 1.0));
    auto shifted = sub(scale(target_cos, std::cos(margin)), scale(sin_t, std::sin(margin)));
    auto logits = add(scale(cosine, scaling),
                      scatter_per_col(scale(sub(shifted, target_cos), scaling), labels,
                                      num_classes));

    // Stable log-sum-exp per column; the max is a constant shift whose
    // gradient contribution cancels.
    Tensor colmax({batch});
    for (std::size_t b = 0; b < batch; ++b) {
        double mx = logits->value.at(0, b);
        for (std::size_t l = 1; l < num_classes; ++l)
            mx = std::max(mx, logits->value.at(l, b));
        colmax.at(b) = mx;
    }
    auto shifted_logits = sub_colvec(logits, constant(colmax));
    auto lse = add(dmsc::log(sum_axis(dmsc::exp(shifted_logits), 0)), constant(colmax));
    auto ce = sub(lse, gather_per_col(logits, labels));
    return scale(sum(ce), 1.0 / static_cast<double>(batch));
}

// ---------------------------------------------------------------------------
// SGD with L2 regularization and plateau-halving learning-rate schedule
// ---------------------------------------------------------------------------

struct SgdConfig {
    double lr_initial = 0.01;
    double l2 = 1e-4;
    double lr_decay_factor = 0.5;
    std::size_t plateau_steps = 2000;  // halve after this many steps without improvement
    double lr_floor = 1e-6;            // training stops once lr drops below this
    double improve_tol = 1e-4;
};

struct SgdState {
    double lr = 0.01;
    std::size_t step = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    std::size_t steps_since_improvement = 0;

    static SgdState fresh(const SgdConfig& cfg) {
        SgdState s;
        s.lr = cfg.lr_initial;
        return s;
    }

    void to_kv(KvDoc& doc) const {
        doc.set_double("trainer.lr", lr);
        doc.set_u64("trainer.step", step);
        doc.set_double("trainer.best_loss", best_loss);
        doc.set_u64("trainer.steps_since_improvement", steps_since_improvement);
    }

    static SgdState from_kv(const KvDoc& doc, const SgdConfig& cfg) {
        SgdState s = fresh(cfg);
        s.lr = doc.get_double_or("trainer.lr", s.lr);
        s.step = doc.get_u64_or("trainer.step", 0);
        s.best_loss = doc.get_double_or("trainer.best_loss", s.best_loss);
        s.steps_since_improvement = doc.get_u64_or("trainer.steps_since_improvement", 0);
        return s;
    }
};

/// p <- p - lr * (g + l2 * p) for every parameter; rejects non-finite
/// gradients with a diagnostic naming the parameter.
inline void sgd_step(const std::vector<NamedParam>& params, SgdState& state,
                     const SgdConfig& cfg) {
    for (const auto& p : params) {
        Var& v = *p.var;
        v.ensure_grad();
        for (std::size_t i = 0; i < v.grad.size(); ++i) {
            if (!std::isfinite(v.grad[i])) {
                throw NumericError("non-finite gradient in parameter '" + p.name + "'");
            }
            v.value.at(i) -= state.lr * (v.grad[i] + cfg.l2 * v.value.at(i));
        }
    }
    ++state.step;
}

/// Plateau schedule: halve the learning rate after plateau_steps steps
/// without the loss improving on its best value by improve_tol.
inline void observe_loss(SgdState& state, const SgdConfig& cfg, double loss) {
    if (loss < state.best_loss - cfg.improve_tol) {
        state.best_loss = loss;
        state.steps_since_improvement = 0;
    } else if (++state.steps_since_improvement >= cfg.plateau_steps) {
        state.lr *= cfg.lr_decay_factor;
        state.steps_since_improvement = 0;
    }
}

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

struct BatchSpec {
    std::size_t languages_per_batch = 16;
    std::size_t segment_min_frames = 200;
    std::size_t segment_max_frames = 400;
};

struct BatchItem {
    Tensor segment;  // [channels x L], L uniform in [segment_min, segment_max]
    std::size_t label;
};

/// Draws languages uniformly with replacement (one segment per draw), picks
/// an utterance of the language uniformly, and slices a random segment of
/// uniform random length. Utterances shorter than the segment are
/// loop-padded. Deterministic under the generator state.
inline std::vector<BatchItem> sample_batch(const std::vector<FeatureSequence>& dataset,
                                           const BatchSpec& spec, rng::SplitMix64& gen) {
    if (dataset.empty()) throw Error("sampling error: dataset is empty");
    std::map<int, std::vector<const FeatureSequence*>> by_language;
    for (const auto& s : dataset) by_language[s.label].push_back(&s);
    std::vector<int> languages;
    for (const auto& [label, utts] : by_language) {
        if (utts.empty()) throw Error("sampling error: language " + std::to_string(label) +
                                      " has no utterances");
        languages.push_back(label);
    }

    std::vector<BatchItem> batch;
    batch.reserve(spec.languages_per_batch);
    for (std::size_t i = 0; i < spec.languages_per_batch; ++i) {
        const int lang = languages[static_cast<std::size_t>(
            gen.uniform_int(0, static_cast<std::int64_t>(languages.size()) - 1))];
        const auto& utts = by_language[lang];
        const FeatureSequence& utt = *utts[static_cast<std::size_t>(
            gen.uniform_int(0, static_cast<std::int64_t>(utts.size()) - 1))];
        const std::size_t seg_len = static_cast<std::size_t>(
            gen.uniform_int(static_cast<std::int64_t>(spec.segment_min_frames),
                            static_cast<std::int64_t>(spec.segment_max_frames)));
        const std::size_t frames = utt.features.cols();
        const std::size_t channels = utt.features.rows();

        BatchItem item;
        item.label = static_cast<std::size_t>(lang);
        item.segment = Tensor({channels, seg_len});
        if (frames >= seg_len) {
            const std::size_t start = static_cast<std::size_t>(
                gen.uniform_int(0, static_cast<std::int64_t>(frames - seg_len)));
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t t = 0; t < seg_len; ++t)
                    item.segment.at(c, t) = utt.features.at(c, start + t);
        } else {
            // loop-pad short utterances
            const std::size_t start = static_cast<std::size_t>(
                gen.uniform_int(0, static_cast<std::int64_t>(frames) - 1));
            for (std::size_t c = 0; c < channels; ++c)
                for (std::size_t t = 0; t < seg_len; ++t)
                    item.segment.at(c, t) = utt.features.at(c, (start + t) % frames);
        }
        batch.push_back(std::move(item));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    SgdConfig sgd;
    BatchSpec batch;
    double aam_margin = 0.2;
    double aam_scale = 30.0;
    std::size_t max_steps = 20000;
    std::size_t log_every_steps = 50;
    std::size_t norm_window_frames = 300;  // 0 disables mean normalization
    std::uint64_t seed = 1;

    void to_kv(KvDoc& doc) const {
        doc.set_double("train.lr_initial", sgd.lr_initial);
        doc.set_double("train.l2_coeff", sgd.l2);
        doc.set_double("train.lr_decay_factor", sgd.lr_decay_factor);
        doc.set_u64("train.plateau_steps", sgd.plateau_steps);
        doc.set_double("train.lr_floor", sgd.lr_floor);
        doc.set_double("train.improve_tol", sgd.improve_tol);
        doc.set_u64("train.languages_per_batch", batch.languages_per_batch);
        doc.set_u64("train.segment_len_min_frames", batch.segment_min_frames);
        doc.set_u64("train.segment_len_max_frames", batch.segment_max_frames);
        doc.set_double("train.aam_margin_rad", aam_margin);
        doc.set_double("train.aam_scale", aam_scale);
        doc.set_u64("train.max_steps", max_steps);
        doc.set_u64("train.log_every_steps", log_every_steps);
        doc.set_u64("train.norm_window_frames", norm_window_frames);
        doc.set_u64("train.seed", seed);
    }

    static TrainConfig from_kv(const KvDoc& doc) {
        TrainConfig cfg;
        cfg.sgd.lr_initial = doc.get_double_or("train.lr_initial", cfg.sgd.lr_initial);
        cfg.sgd.l2 = doc.get_double_or("train.l2_coeff", cfg.sgd.l2);
        cfg.sgd.lr_decay_factor =
            doc.get_double_or("train.lr_decay_factor", cfg.sgd.lr_decay_factor);
        cfg.sgd.plateau_steps = doc.get_u64_or("train.plateau_steps", cfg.sgd.plateau_steps);
        cfg.sgd.lr_floor = doc.get_double_or("train.lr_floor", cfg.sgd.lr_floor);
        cfg.sgd.improve_tol = doc.get_double_or("train.improve_tol", cfg.sgd.improve_tol);
        cfg.batch.languages_per_batch =
            doc.get_u64_or("train.languages_per_batch", cfg.batch.languages_per_batch);
        cfg.batch.segment_min_frames =
            doc.get_u64_or("train.segment_len_min_frames", cfg.batch.segment_min_frames);
        cfg.batch.segment_max_frames =
            doc.get_u64_or("train.segment_len_max_frames", cfg.batch.segment_max_frames);
        cfg.aam_margin = doc.get_double_or("train.aam_margin_rad", cfg.aam_margin);
        cfg.aam_scale = doc.get_double_or("train.aam_scale", cfg.aam_scale);
        cfg.max_steps = doc.get_u64_or("train.max_steps", cfg.max_steps);
        cfg.log_every_steps = doc.get_u64_or("train.log_every_steps", cfg.log_every_steps);
        cfg.norm_window_frames =
            doc.get_u64_or("train.norm_window_frames", cfg.norm_window_frames);
        cfg.seed = doc.get_u64_or("train.seed", cfg.seed);
        if (cfg.batch.segment_min_frames < 1 ||
            cfg.batch.segment_max_frames < cfg.batch.segment_min_frames) {
            throw ConfigError("segment length range is invalid");
        }
        if (cfg.sgd.lr_initial <= 0) throw ConfigError("initial learning rate must be positive");
        return cfg;
    }
};

struct TracePoint {
    std::size_t step;
    double lr;
    double loss;
};

struct TrainResult {
    std::vector<TracePoint> trace;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    std::size_t steps_run = 0;
    std::string stop_reason;
};

/// Applies sliding-window mean normalization to every utterance up front.
inline std::vector<FeatureSequence> prepare_dataset(const std::vector<FeatureSequence>& dataset,
                                                    std::size_t norm_window) {
    if (norm_window == 0) return dataset;
    std::vector<FeatureSequence> out;
    out.reserve(dataset.size());
    for (const auto& s : dataset) {
        out.push_back({s.id, s.label, sliding_mean_norm(s.features, norm_window)});
    }
    return out;
}

/// One optimization step: per-step seeded batch, per-segment trunk forwards,
/// batched embedding tail, AAM loss, backward, SGD update, schedule update.
/// Returns the training loss at this step.
inline double train_step(Model& model, const std::vector<FeatureSequence>& prepared,
                         const TrainConfig& cfg, SgdState& state,
                         const std::vector<NamedParam>& params) {
    auto gen = rng::stream(cfg.seed, "batch", state.step);
    const auto batch = sample_batch(prepared, cfg.batch, gen);

    const RunContext ctx = RunContext::train();
    std::vector<VarPtr> pooled;
    std::vector<std::size_t> labels;
    pooled.reserve(batch.size());
    for (const auto& item : batch) {
        pooled.push_back(model.pooled(constant(item.segment), ctx));
        labels.push_back(item.label);
    }
    auto embeddings = model.embed(stack_cols(pooled), ctx);
    auto loss = aam_loss(embeddings, labels, model.classifier_weight(), cfg.aam_margin,
                         cfg.aam_scale);
    const double loss_value = loss->value.at(0);

    for (const auto& p : params) p.var->zero_grad();
    backward(loss);
    sgd_step(params, state, cfg.sgd);
    observe_loss(state, cfg.sgd, loss_value);
    return loss_value;
}

/// Runs until max_steps or until the learning rate decays below the floor.
/// `on_checkpoint` (when set) is invoked at every log boundary so the caller
/// can persist checkpoints and the loss trace. Throws NumericError on
/// divergence (non-finite values), leaving the last checkpoint on disk
/// untouched.
inline TrainResult train(Model& model, const std::vector<FeatureSequence>& dataset,
                         const TrainConfig& cfg, SgdState& state,
                         const std::function<void(const TrainResult&, const SgdState&)>&
                             on_checkpoint = nullptr) {
    if (dataset.empty()) throw Error("training dataset is empty");
    const auto prepared = prepare_dataset(dataset, cfg.norm_window_frames);
    const auto params = model.registry().params;

    TrainResult result;
    const auto record = [&](double loss_value) {
        result.trace.push_back({state.step, state.lr, loss_value});
        result.final_loss = loss_value;
        result.steps_run = state.step;
        if (on_checkpoint) on_checkpoint(result, state);
    };

    while (true) {
        if (state.step >= cfg.max_steps) {
            result.stop_reason = "max-steps";
            break;
        }
        if (state.lr < cfg.sgd.lr_floor) {
            result.stop_reason = "lr-floor";
            break;
        }
        try {
            const double loss_value = train_step(model, prepared, cfg, state, params);
            result.final_loss = loss_value;
            result.steps_run = state.step;
            if (state.step % cfg.log_every_steps == 0 || state.step == 1 ||
                state.step >= cfg.max_steps) {
                record(loss_value);
            }
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (diverged at step " +
                               std::to_string(state.step) + ")");
        }
    }
    if (!result.trace.empty() && result.trace.back().step != state.step && state.step > 0) {
        record(result.final_loss);
    }
    return result;
}

inline void write_loss_csv(const std::string& path, const std::vector<TracePoint>& trace) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << "step,lr,loss\n";
    out << std::setprecision(17);
    for (const auto& p : trace) out << p.step << "," << p.lr << "," << p.loss << "\n";
}

}  // namespace dmsc
