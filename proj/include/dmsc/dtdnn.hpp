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
#include <memory>
#include <string>

#include "dmsc/dynamic_multiscale.hpp"
#include "dmsc/layers.hpp"

namespace dmsc {

/// Which frame-level unit sits at the end of a densely connected layer.
enum class DtdnnUnit {
    kConv,        // plain dilated TDNN convolution
    kDkConv,      // dynamic kernel convolution
    kMultiScale,  // local multi-scale block of grouped DkConvs
};

/// One densely connected TDNN layer, pre-activation style:
///   BN(C) -> ReLU -> Dense bottleneck -> BN -> ReLU -> unit -> G new channels
/// and the output concatenates the input with the new channels, so width
/// grows by exactly the growth rate. For the multi-scale unit the bottleneck
/// maps straight to the growth width and the unit preserves it (its group
/// convolutions each carry growth/s filters); otherwise the bottleneck maps
/// to the configured bottleneck width.
class DtdnnLayer {
public:
    struct Config {
        std::size_t c_in = 0;
        std::size_t bottleneck = 128;
        std::size_t growth = 64;
        std::size_t kernel = 3;
        std::size_t dilation = 1;  // plain conv unit only
        DtdnnUnit unit = DtdnnUnit::kConv;
        std::size_t splits = 4;     // multi-scale unit only
        std::size_t reduction = 4;  // attention reduction in Dk units
    };

    DtdnnLayer(const std::string& prefix, const Config& cfg, std::uint64_t seed)
        : cfg_(cfg),
          bn_in_(prefix + ".bn_in", cfg.c_in),
          bottleneck_(prefix + ".bottleneck", cfg.c_in,
                      cfg.unit == DtdnnUnit::kMultiScale ? cfg.growth : cfg.bottleneck, seed),
          bn_mid_(prefix + ".bn_mid", bottleneck_.out_width()) {
        switch (cfg.unit) {
            case DtdnnUnit::kConv:
                conv_weight_ = parameter(
                    init::uniform_fanin({cfg.growth, cfg.bottleneck, cfg.kernel},
                                        cfg.bottleneck * cfg.kernel, seed, prefix + ".conv.weight"),
                    prefix + ".conv.weight");
                conv_bias_ = parameter(Tensor({cfg.growth}), prefix + ".conv.bias");
                break;
            case DtdnnUnit::kDkConv:
                dk_ = std::make_unique<DkConv>(prefix + ".dk", cfg.bottleneck, cfg.growth,
                                               cfg.kernel, cfg.reduction, seed);
                break;
            case DtdnnUnit::kMultiScale:
                ms_ = std::make_unique<MultiScaleDk>(prefix + ".ms", cfg.growth, cfg.splits,
                                                     cfg.kernel, cfg.reduction, seed);
                break;
        }
    }

    VarPtr forward(const VarPtr& x, const RunContext& ctx) const {
        return forward_group({x}, ctx)[0];
    }

    std::vector<VarPtr> forward_group(const std::vector<VarPtr>& xs, const RunContext& ctx) const {
        for (const auto& x : xs) {
            if (x->value.rank() != 2 || x->value.rows() != cfg_.c_in) {
                throw ConfigError("dtdnn layer expects " + std::to_string(cfg_.c_in) +
                                  " input channels, got " + x->value.shape_str());
            }
        }
        auto hs = bn_in_.forward_group(xs, ctx);
        for (auto& h : hs) h = bottleneck_.forward(relu(h));
        hs = bn_mid_.forward_group(hs, ctx);
        std::vector<VarPtr> out;
        out.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            auto h = relu(hs[i]);
            VarPtr fresh;
            switch (cfg_.unit) {
                case DtdnnUnit::kConv:
                    fresh = add_rowvec(conv1d(h, conv_weight_, cfg_.dilation), conv_bias_);
                    break;
                case DtdnnUnit::kDkConv:
                    fresh = dk_->forward(h);
                    break;
                case DtdnnUnit::kMultiScale:
                    fresh = ms_->forward(h);
                    break;
            }
            out.push_back(concat_rows({xs[i], fresh}));
        }
        return out;
    }

    std::size_t in_width() const { return cfg_.c_in; }
    std::size_t out_width() const { return cfg_.c_in + cfg_.growth; }
    const Config& config() const { return cfg_; }
    MultiScaleDk* multiscale() { return ms_.get(); }

    void collect(ParamRegistry& reg) const {
        bn_in_.collect(reg);
        bottleneck_.collect(reg);
        bn_mid_.collect(reg);
        if (conv_weight_) {
            reg.add(conv_weight_);
            reg.add(conv_bias_);
        }
        if (dk_) dk_->collect(reg);
        if (ms_) ms_->collect(reg);
    }

private:
    Config cfg_;
    BatchNorm bn_in_;
    Dense bottleneck_;
    BatchNorm bn_mid_;
    VarPtr conv_weight_, conv_bias_;
    std::unique_ptr<DkConv> dk_;
    std::unique_ptr<MultiScaleDk> ms_;
};

/// Transition after a dense block: BN -> ReLU -> width-halving dense layer.
/// Its output is the block's bottleneck feature, which also serves as a tap
/// for global multi-scale pooling.
class TransitionLayer {
public:
    TransitionLayer(const std::string& prefix, std::size_t c_in, std::uint64_t seed)
        : bn_(prefix + ".bn", c_in), dense_(prefix + ".dense", c_in, c_in / 2, seed) {}

    VarPtr forward(const VarPtr& x, const RunContext& ctx) const {
        return forward_group({x}, ctx)[0];
    }

    std::vector<VarPtr> forward_group(const std::vector<VarPtr>& xs, const RunContext& ctx) const {
        auto hs = bn_.forward_group(xs, ctx);
        for (auto& h : hs) h = dense_.forward(relu(h));
        return hs;
    }

    std::size_t out_width() const { return dense_.out_width(); }

    void collect(ParamRegistry& reg) const {
        bn_.collect(reg);
        dense_.collect(reg);
    }

private:
    BatchNorm bn_;
    Dense dense_;
};

}  // namespace dmsc
