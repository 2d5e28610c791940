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
#include <sstream>
#include <string>
#include <vector>

#include "dmsc/dtdnn.hpp"
#include "dmsc/dynamic_multiscale.hpp"
#include "dmsc/kvconfig.hpp"
#include "dmsc/layers.hpp"

namespace dmsc {

/// The four ablation variants. The baseline is the densely connected TDNN
/// skeleton; dk-conv swaps every frame-level convolution for a dynamic
/// kernel convolution; local-ms swaps every densely connected layer for a
/// multi-scale block of grouped DkConvs; global-local-ms additionally pools
/// over both transition taps instead of the last one only.
enum class Variant { kBaseline, kDkConv, kLocalMs, kGlobalLocalMs };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::kBaseline: return "dtdnn-baseline";
        case Variant::kDkConv: return "dkconv";
        case Variant::kLocalMs: return "local-ms";
        case Variant::kGlobalLocalMs: return "global-local-ms";
    }
    throw ConfigError("unknown variant");
}

inline Variant parse_variant(const std::string& s) {
    if (s == "dtdnn-baseline") return Variant::kBaseline;
    if (s == "dkconv") return Variant::kDkConv;
    if (s == "local-ms") return Variant::kLocalMs;
    if (s == "global-local-ms") return Variant::kGlobalLocalMs;
    throw ConfigError("unknown variant '" + s +
                      "' (expected dtdnn-baseline | dkconv | local-ms | global-local-ms)");
}

/// Declarative description of the network. The defaults are the reference
/// configuration: 64+3 input features, 64 filters, s = 4, kernel 3, stem
/// context [t-5:t+5], and an 11-tap stem kernel; dense blocks of 6 and 12
/// layers follow the densely connected TDNN design with bottleneck 128 and
/// growth 64, with a width-halving transition after each block; dilation 3
/// (context [t-3:t+3]) for plain convolutions except the last 6 layers at
/// dilation 5 ([t-5:t+5]).
struct ModelConfig {
    std::size_t input_dim = 67;
    std::size_t stem_channels = 128;
    std::size_t stem_kernel = 11;
    std::size_t stem_dilation = 1;
    std::size_t bottleneck = 128;
    std::size_t growth = 64;
    std::vector<std::size_t> block_layers = {6, 12};
    std::size_t kernel = 3;
    std::size_t dilation_default = 3;
    std::size_t dilation_tail = 5;
    std::size_t tail_layers = 6;
    std::size_t splits = 4;
    std::size_t reduction = 4;
    std::size_t embed_dim = 512;
    std::size_t num_classes = 16;
    Variant variant = Variant::kGlobalLocalMs;

    void validate() const {
        if (input_dim == 0 || stem_channels == 0 || growth == 0 || embed_dim == 0 ||
            num_classes < 2) {
            throw ConfigError("model dimensions must be positive (and num_classes >= 2)");
        }
        if (block_layers.empty()) throw ConfigError("at least one dense block is required");
        if (stem_kernel % 2 == 0 || kernel % 2 == 0) {
            throw ConfigError("kernel sizes must be odd");
        }
        if (splits == 0 || growth % splits != 0) {
            throw ConfigError("growth " + std::to_string(growth) + " must be divisible by s = " +
                              std::to_string(splits));
        }
        const std::size_t group = growth / splits;
        if (reduction == 0 || group % reduction != 0 || growth % reduction != 0) {
            throw ConfigError("channel groups must be divisible by the reduction ratio r = " +
                              std::to_string(reduction));
        }
    }

    KvDoc to_kv() const {
        KvDoc doc;
        doc.set("model.variant", variant_name(variant));
        doc.set_int("model.input_dim", static_cast<std::int64_t>(input_dim));
        doc.set_int("model.stem_channels", static_cast<std::int64_t>(stem_channels));
        doc.set_int("model.stem_kernel", static_cast<std::int64_t>(stem_kernel));
        doc.set_int("model.stem_dilation", static_cast<std::int64_t>(stem_dilation));
        doc.set_int("model.bottleneck", static_cast<std::int64_t>(bottleneck));
        doc.set_int("model.growth", static_cast<std::int64_t>(growth));
        std::string blocks;
        for (std::size_t i = 0; i < block_layers.size(); ++i) {
            if (i) blocks += ",";
            blocks += std::to_string(block_layers[i]);
        }
        doc.set("model.block_layers", blocks);
        doc.set_int("model.kernel", static_cast<std::int64_t>(kernel));
        doc.set_int("model.dilation_default", static_cast<std::int64_t>(dilation_default));
        doc.set_int("model.dilation_tail", static_cast<std::int64_t>(dilation_tail));
        doc.set_int("model.tail_layers", static_cast<std::int64_t>(tail_layers));
        doc.set_int("model.splits", static_cast<std::int64_t>(splits));
        doc.set_int("model.reduction", static_cast<std::int64_t>(reduction));
        doc.set_int("model.embed_dim", static_cast<std::int64_t>(embed_dim));
        doc.set_int("model.num_classes", static_cast<std::int64_t>(num_classes));
        return doc;
    }

    static ModelConfig from_kv(const KvDoc& doc) {
        ModelConfig cfg;
        cfg.variant = parse_variant(doc.get_or("model.variant", variant_name(cfg.variant)));
        const auto geti = [&](const char* key, std::size_t fallback) {
            const std::int64_t v = doc.get_int_or(key, static_cast<std::int64_t>(fallback));
            if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
            return static_cast<std::size_t>(v);
        };
        cfg.input_dim = geti("model.input_dim", cfg.input_dim);
        cfg.stem_channels = geti("model.stem_channels", cfg.stem_channels);
        cfg.stem_kernel = geti("model.stem_kernel", cfg.stem_kernel);
        cfg.stem_dilation = geti("model.stem_dilation", cfg.stem_dilation);
        cfg.bottleneck = geti("model.bottleneck", cfg.bottleneck);
        cfg.growth = geti("model.growth", cfg.growth);
        if (doc.has("model.block_layers")) {
            cfg.block_layers.clear();
            std::istringstream in(doc.get("model.block_layers"));
            std::string item;
            while (std::getline(in, item, ',')) {
                cfg.block_layers.push_back(static_cast<std::size_t>(std::stoll(item)));
            }
        }
        cfg.kernel = geti("model.kernel", cfg.kernel);
        cfg.dilation_default = geti("model.dilation_default", cfg.dilation_default);
        cfg.dilation_tail = geti("model.dilation_tail", cfg.dilation_tail);
        cfg.tail_layers = geti("model.tail_layers", cfg.tail_layers);
        cfg.splits = geti("model.splits", cfg.splits);
        cfg.reduction = geti("model.reduction", cfg.reduction);
        cfg.embed_dim = geti("model.embed_dim", cfg.embed_dim);
        cfg.num_classes = geti("model.num_classes", cfg.num_classes);
        cfg.validate();
        return cfg;
    }
};

struct LayerCount {
    std::string name;
    std::size_t params;
};

struct ParamCountReport {
    std::size_t total = 0;
    std::vector<LayerCount> layers;
};

/// The assembled network: stem TDNN, two dense blocks with transitions,
/// statistics pooling (over one or two taps depending on the variant), a
/// two-stage embedding tail and a cosine classifier head.
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed) : cfg_(std::move(config)), seed_(seed) {
        cfg_.validate();
        stem_ = std::make_unique<TdnnLayer>("stem", cfg_.input_dim, cfg_.stem_channels,
                                            cfg_.stem_kernel, cfg_.stem_dilation, seed);

        std::size_t width = cfg_.stem_channels;
        const std::size_t total_layers = [&] {
            std::size_t n = 0;
            for (std::size_t b : cfg_.block_layers) n += b;
            return n;
        }();
        std::size_t layer_index = 0;
        for (std::size_t b = 0; b < cfg_.block_layers.size(); ++b) {
            std::vector<std::unique_ptr<DtdnnLayer>> block;
            for (std::size_t l = 0; l < cfg_.block_layers[b]; ++l, ++layer_index) {
                DtdnnLayer::Config lc;
                lc.c_in = width;
                lc.bottleneck = cfg_.bottleneck;
                lc.growth = cfg_.growth;
                lc.kernel = cfg_.kernel;
                const bool in_tail = layer_index + cfg_.tail_layers >= total_layers;
                lc.dilation = in_tail ? cfg_.dilation_tail : cfg_.dilation_default;
                lc.splits = cfg_.splits;
                lc.reduction = cfg_.reduction;
                switch (cfg_.variant) {
                    case Variant::kBaseline: lc.unit = DtdnnUnit::kConv; break;
                    case Variant::kDkConv: lc.unit = DtdnnUnit::kDkConv; break;
                    case Variant::kLocalMs:
                    case Variant::kGlobalLocalMs: lc.unit = DtdnnUnit::kMultiScale; break;
                }
                block.push_back(std::make_unique<DtdnnLayer>(
                    "block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1), lc, seed));
                width = block.back()->out_width();
            }
            blocks_.push_back(std::move(block));
            transitions_.push_back(std::make_unique<TransitionLayer>(
                "transition" + std::to_string(b + 1), width, seed));
            width = transitions_.back()->out_width();
        }

        pool_dim_ = 2 * (cfg_.variant == Variant::kGlobalLocalMs ? tap_width_sum() : width);
        embed1_ = std::make_unique<Dense>("embedding1.dense", pool_dim_, cfg_.embed_dim, seed);
        embed1_bn_ = std::make_unique<BatchNorm>("embedding1.bn", cfg_.embed_dim);
        embed2_ = std::make_unique<Dense>("embedding2.dense", cfg_.embed_dim, cfg_.embed_dim, seed);
        embed2_bn_ = std::make_unique<BatchNorm>("embedding2.bn", cfg_.embed_dim);
        classifier_ = parameter(init::uniform_fanin({cfg_.num_classes, cfg_.embed_dim},
                                                    cfg_.embed_dim, seed, "classifier.weight"),
                                "classifier.weight");
    }

    const ModelConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    std::size_t pool_dim() const { return pool_dim_; }

    /// Shortest input the convolution stack accepts. Dk units always run
    /// their branches at dilations 1 and 2; only plain convolutions follow
    /// the context plan.
    std::size_t min_frames() const {
        std::size_t reach = (cfg_.stem_kernel - 1) * cfg_.stem_dilation;
        const std::size_t conv_dilation =
            cfg_.variant == Variant::kBaseline ? std::max(cfg_.dilation_default, cfg_.dilation_tail)
                                               : 2;
        reach = std::max(reach, (cfg_.kernel - 1) * conv_dilation);
        return reach + 1;
    }

    /// Frame-level trunk + statistics pooling: [input_dim x T] -> [pool_dim].
    VarPtr pooled(const VarPtr& x, const RunContext& ctx) const {
        return pooled_group({x}, ctx)[0];
    }

    /// Batched trunk: one pooled vector per segment, with batch-norm
    /// statistics shared across the whole group in training mode.
    std::vector<VarPtr> pooled_group(const std::vector<VarPtr>& xs, const RunContext& ctx) const {
        for (const auto& x : xs) {
            if (x->value.rank() != 2 || x->value.rows() != cfg_.input_dim) {
                throw DimError("model expects [" + std::to_string(cfg_.input_dim) +
                               " x T] features, got " + x->value.shape_str());
            }
        }
        auto hs = stem_->forward_group(xs, ctx);
        // taps[b][i]: transition-b output of segment i
        std::vector<std::vector<VarPtr>> taps;
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (const auto& layer : blocks_[b]) hs = layer->forward_group(hs, ctx);
            hs = transitions_[b]->forward_group(hs, ctx);
            taps.push_back(hs);
        }
        std::vector<VarPtr> pooled_out;
        pooled_out.reserve(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            if (cfg_.variant == Variant::kGlobalLocalMs) {
                std::vector<VarPtr> segment_taps;
                segment_taps.reserve(taps.size());
                for (const auto& tap : taps) segment_taps.push_back(tap[i]);
                pooled_out.push_back(global_multiscale_pool(segment_taps));
            } else {
                pooled_out.push_back(stats_pool(hs[i]));
            }
        }
        return pooled_out;
    }

    /// Utterance-level tail on stacked pooled vectors: [pool_dim x B] ->
    /// [embed_dim x B]. The embedding is the output of the second dense
    /// stage after its batch norm.
    VarPtr embed(const VarPtr& pooled_cols, const RunContext& ctx) const {
        auto h = relu(embed1_bn_->forward(embed1_->forward(pooled_cols), ctx));
        return embed2_bn_->forward(embed2_->forward(h), ctx);
    }

    /// Scaled cosine similarity logits between embeddings and class weights:
    /// [embed_dim x B] -> [num_classes x B].
    VarPtr cosine_logits(const VarPtr& emb_cols, double scaling) const {
        auto wn = div_rowvec(classifier_,
                             dmsc::sqrt(add_scalar(sum_axis(mul(classifier_, classifier_), 1),
                                                   kEps)));
        auto en = div_colvec(emb_cols,
                             dmsc::sqrt(add_scalar(sum_axis(mul(emb_cols, emb_cols), 0), kEps)));
        return scale(matmul(wn, en), scaling);
    }

    /// Single-utterance embedding, [embed_dim].
    VarPtr embedding(const VarPtr& x, const RunContext& ctx) const {
        auto p = pooled(x, ctx);
        return reshape(embed(reshape(p, {pool_dim_, 1}), ctx), {cfg_.embed_dim});
    }

    /// Single-utterance logits, [num_classes], at the given cosine scale.
    VarPtr logits(const VarPtr& x, const RunContext& ctx, double scaling = 30.0) const {
        auto p = pooled(x, ctx);
        auto e = embed(reshape(p, {pool_dim_, 1}), ctx);
        return reshape(cosine_logits(e, scaling), {cfg_.num_classes});
    }

    const VarPtr& classifier_weight() const { return classifier_; }

    ParamRegistry registry() const {
        ParamRegistry reg;
        stem_->collect(reg);
        for (const auto& block : blocks_)
            for (const auto& layer : block) layer->collect(reg);
        for (const auto& t : transitions_) t->collect(reg);
        embed1_->collect(reg);
        embed1_bn_->collect(reg);
        embed2_->collect(reg);
        embed2_bn_->collect(reg);
        reg.add(classifier_);
        return reg;
    }

    /// Exact scalar-parameter count (BN gamma/beta included, running
    /// statistics excluded) with a per-layer breakdown.
    ParamCountReport count_params() const {
        ParamCountReport report;
        const auto count_unit = [&](const std::string& name, const auto& unit) {
            ParamRegistry reg;
            unit.collect(reg);
            const std::size_t n = reg.num_scalars();
            report.layers.push_back({name, n});
            report.total += n;
        };
        count_unit("stem", *stem_);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            for (std::size_t l = 0; l < blocks_[b].size(); ++l) {
                count_unit("block" + std::to_string(b + 1) + ".layer" + std::to_string(l + 1),
                           *blocks_[b][l]);
            }
            count_unit("transition" + std::to_string(b + 1), *transitions_[b]);
        }
        count_unit("embedding1.dense", *embed1_);
        count_unit("embedding1.bn", *embed1_bn_);
        count_unit("embedding2.dense", *embed2_);
        count_unit("embedding2.bn", *embed2_bn_);
        report.layers.push_back({"classifier", classifier_->value.numel()});
        report.total += classifier_->value.numel();
        return report;
    }

private:
    std::size_t tap_width_sum() const {
        std::size_t total = 0;
        for (const auto& t : transitions_) total += t->out_width();
        return total;
    }

    ModelConfig cfg_;
    std::uint64_t seed_;
    std::unique_ptr<TdnnLayer> stem_;
    std::vector<std::vector<std::unique_ptr<DtdnnLayer>>> blocks_;
    std::vector<std::unique_ptr<TransitionLayer>> transitions_;
    std::size_t pool_dim_ = 0;
    std::unique_ptr<Dense> embed1_, embed2_;
    std::unique_ptr<BatchNorm> embed1_bn_, embed2_bn_;
    VarPtr classifier_;
};

}  // namespace dmsc
