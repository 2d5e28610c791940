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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dmsc/autodiff.hpp"
#include "dmsc/rng.hpp"

namespace dmsc {

/// Controls forward-pass semantics. Inference mode is a pure function of the
/// inputs and parameters; training mode uses per-batch statistics in batch
/// norm, and mutates running statistics only when update_running_stats is
/// set (gradient checking runs training-mode math without the update).
struct RunContext {
    bool training = false;
    bool update_running_stats = false;

    static RunContext inference() { return {false, false}; }
    static RunContext train() { return {true, true}; }
    static RunContext gradcheck() { return {true, false}; }
};

struct NamedParam {
    std::string name;
    VarPtr var;
};

/// Non-trainable state that still belongs in a checkpoint (BN running stats).
struct NamedBuffer {
    std::string name;
    Tensor* tensor;
};

struct ParamRegistry {
    std::vector<NamedParam> params;
    std::vector<NamedBuffer> buffers;

    void add(const VarPtr& p) { params.push_back({p->name, p}); }
    void add_buffer(std::string name, Tensor* t) { buffers.push_back({std::move(name), t}); }

    std::vector<VarPtr> param_vars() const {
        std::vector<VarPtr> out;
        out.reserve(params.size());
        for (const auto& p : params) out.push_back(p.var);
        return out;
    }

    std::size_t num_scalars() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.var->value.numel();
        return n;
    }
};

namespace init {

/// Uniform in +/- sqrt(1/fan_in); keeps pre-activation variance bounded.
inline Tensor uniform_fanin(std::vector<std::size_t> shape, std::size_t fan_in,
                            std::uint64_t seed, const std::string& stream_name) {
    auto gen = rng::stream(seed, stream_name);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    return Tensor::uniform(std::move(shape), -bound, bound, gen);
}

}  // namespace init

/// Fully connected layer applied frame-wise: [in x T] -> [out x T].
class Dense {
public:
    Dense(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed,
          bool with_bias = true)
        : in_(in),
          out_(out),
          weight_(parameter(init::uniform_fanin({out, in}, in, seed, prefix + ".weight"),
                            prefix + ".weight")),
          bias_(with_bias ? parameter(Tensor({out}), prefix + ".bias") : nullptr) {}

    VarPtr forward(const VarPtr& x) const {
        auto y = matmul(weight_, x);
        return bias_ ? add_rowvec(y, bias_) : y;
    }

    std::size_t in_width() const { return in_; }
    std::size_t out_width() const { return out_; }
    const VarPtr& weight() const { return weight_; }
    const VarPtr& bias() const { return bias_; }

    void collect(ParamRegistry& reg) const {
        reg.add(weight_);
        if (bias_) reg.add(bias_);
    }

private:
    std::size_t in_, out_;
    VarPtr weight_;  // [out x in]
    VarPtr bias_;    // [out], optional
};

/// Per-channel batch normalization over the column axis (time for frame-level
/// tensors, the batch for stacked utterance-level vectors). Inference mode
/// uses running statistics only.
class BatchNorm {
public:
    BatchNorm(const std::string& prefix, std::size_t channels, double momentum = 0.99,
              double epsilon = 1e-5)
        : prefix_(prefix),
          channels_(channels),
          momentum_(momentum),
          epsilon_(epsilon),
          gamma_(parameter(Tensor::full({channels}, 1.0), prefix + ".gamma")),
          beta_(parameter(Tensor({channels}), prefix + ".beta")),
          running_mean_(Tensor({channels})),
          running_var_(Tensor::full({channels}, 1.0)) {}

    VarPtr forward(const VarPtr& x, const RunContext& ctx) const {
        return forward_group({x}, ctx)[0];
    }

    /// Normalizes a batch of [C x T_i] tensors with shared statistics: in
    /// training mode the per-channel mean/variance pool every frame of every
    /// group member (so batch members cannot be told apart by their own
    /// statistics, and running statistics estimate the same quantity).
    std::vector<VarPtr> forward_group(const std::vector<VarPtr>& xs,
                                      const RunContext& ctx) const {
        if (xs.empty()) throw DimError("batch norm got an empty group");
        std::size_t total_cols = 0;
        for (const auto& x : xs) {
            if (x->value.rank() != 2 || x->value.rows() != channels_) {
                throw DimError("batch norm over " + std::to_string(channels_) +
                               " channels got input " + x->value.shape_str());
            }
            total_cols += x->value.cols();
        }
        std::vector<VarPtr> out;
        out.reserve(xs.size());
        if (ctx.training) {
            VarPtr col_sum = sum_axis(xs[0], 1);
            for (std::size_t i = 1; i < xs.size(); ++i)
                col_sum = add(col_sum, sum_axis(xs[i], 1));
            auto mu = scale(col_sum, 1.0 / static_cast<double>(total_cols));

            std::vector<VarPtr> centered;
            centered.reserve(xs.size());
            VarPtr sq_sum;
            for (const auto& x : xs) {
                auto d = sub_rowvec(x, mu);
                centered.push_back(d);
                auto s = sum_axis(mul(d, d), 1);
                sq_sum = sq_sum ? add(sq_sum, s) : s;
            }
            auto var = scale(sq_sum, 1.0 / static_cast<double>(total_cols));
            if (ctx.update_running_stats) {
                for (std::size_t c = 0; c < channels_; ++c) {
                    running_mean_.at(c) =
                        momentum_ * running_mean_.at(c) + (1.0 - momentum_) * mu->value.at(c);
                    running_var_.at(c) =
                        momentum_ * running_var_.at(c) + (1.0 - momentum_) * var->value.at(c);
                }
            }
            auto denom = dmsc::sqrt(add_scalar(var, epsilon_));
            for (const auto& d : centered) {
                out.push_back(add_rowvec(mul_rowvec(div_rowvec(d, denom), gamma_), beta_));
            }
        } else {
            Tensor denom({channels_});
            for (std::size_t c = 0; c < channels_; ++c)
                denom.at(c) = std::sqrt(running_var_.at(c) + epsilon_);
            auto denom_const = constant(std::move(denom));
            auto mean_const = constant(running_mean_);
            for (const auto& x : xs) {
                auto normalized = div_rowvec(sub_rowvec(x, mean_const), denom_const);
                out.push_back(add_rowvec(mul_rowvec(normalized, gamma_), beta_));
            }
        }
        return out;
    }

    std::size_t channels() const { return channels_; }
    const Tensor& running_mean() const { return running_mean_; }
    const Tensor& running_var() const { return running_var_; }

    void collect(ParamRegistry& reg) const {
        reg.add(gamma_);
        reg.add(beta_);
        reg.add_buffer(prefix_ + ".running_mean", &running_mean_);
        reg.add_buffer(prefix_ + ".running_var", &running_var_);
    }

private:
    std::string prefix_;
    std::size_t channels_;
    double momentum_, epsilon_;
    VarPtr gamma_, beta_;
    // Mutated only by training-mode forwards with update_running_stats set;
    // concurrent inference never touches them.
    mutable Tensor running_mean_, running_var_;
};

/// TDNN layer: dilated 1-D convolution followed by BN and ReLU. The temporal
/// context half-width is ((K-1)/2) * dilation.
class TdnnLayer {
public:
    TdnnLayer(const std::string& prefix, std::size_t c_in, std::size_t c_out, std::size_t kernel,
              std::size_t dilation, std::uint64_t seed)
        : dilation_(dilation),
          weight_(parameter(
              init::uniform_fanin({c_out, c_in, kernel}, c_in * kernel, seed, prefix + ".weight"),
              prefix + ".weight")),
          bias_(parameter(Tensor({c_out}), prefix + ".bias")),
          bn_(prefix + ".bn", c_out) {}

    VarPtr forward(const VarPtr& x, const RunContext& ctx) const {
        return forward_group({x}, ctx)[0];
    }

    std::vector<VarPtr> forward_group(const std::vector<VarPtr>& xs, const RunContext& ctx) const {
        std::vector<VarPtr> pre;
        pre.reserve(xs.size());
        for (const auto& x : xs) pre.push_back(add_rowvec(conv1d(x, weight_, dilation_), bias_));
        auto normalized = bn_.forward_group(pre, ctx);
        for (auto& y : normalized) y = relu(y);
        return normalized;
    }

    std::size_t kernel() const { return weight_->value.size(2); }
    std::size_t dilation() const { return dilation_; }
    std::size_t context_halfwidth() const { return (kernel() - 1) / 2 * dilation_; }

    void collect(ParamRegistry& reg) const {
        reg.add(weight_);
        reg.add(bias_);
        bn_.collect(reg);
    }

private:
    std::size_t dilation_;
    VarPtr weight_;  // [c_out x c_in x K]
    VarPtr bias_;
    BatchNorm bn_;
};

}  // namespace dmsc
