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

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dmsc/checkpoint.hpp"
#include "dmsc/model.hpp"

using namespace dmsc;

namespace {

ModelConfig tiny_config(Variant v) {
    ModelConfig cfg;
    cfg.input_dim = 5;
    cfg.stem_channels = 8;
    cfg.stem_kernel = 3;
    cfg.stem_dilation = 2;
    cfg.bottleneck = 6;
    cfg.growth = 4;
    cfg.block_layers = {2, 2};
    cfg.kernel = 3;
    cfg.dilation_default = 2;
    cfg.dilation_tail = 3;
    cfg.tail_layers = 2;
    cfg.splits = 2;
    cfg.reduction = 2;
    cfg.embed_dim = 6;
    cfg.num_classes = 3;
    cfg.variant = v;
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(ModelConfig, KvRoundTripIsStable) {
    ModelConfig cfg;  // reference defaults
    const std::string once = cfg.to_kv().serialize();
    const ModelConfig back = ModelConfig::from_kv(KvDoc::parse(once));
    EXPECT_EQ(back.to_kv().serialize(), once);
    EXPECT_EQ(back.block_layers, cfg.block_layers);
    EXPECT_EQ(back.variant, cfg.variant);
}

TEST(ModelConfig, InvalidVariantAndDivisibilityRejected) {
    EXPECT_THROW(parse_variant("resnet"), ConfigError);
    ModelConfig cfg = tiny_config(Variant::kLocalMs);
    cfg.splits = 3;  // growth 4 not divisible
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Model, BaselineBuildsAndPoolsFinalFeatures) {
    Model m(tiny_config(Variant::kBaseline), 21);
    // two blocks: 8 + 2*4 = 16 -> 8, then 8 + 2*4 = 16 -> 8; stats pool = 16
    EXPECT_EQ(m.pool_dim(), 16u);
    rng::SplitMix64 gen(rng::mix(1, 2));
    auto logits = m.logits(constant(Tensor::gaussian({5, 20}, gen)), RunContext::inference());
    EXPECT_EQ(logits->value.numel(), 3u);
}

TEST(Model, GlobalVariantPoolsBothTaps) {
    Model m(tiny_config(Variant::kGlobalLocalMs), 21);
    EXPECT_EQ(m.pool_dim(), 2u * (8 + 8));
}

TEST(Model, ReferenceGlobalLocalForwardProducesFiniteLogits) {
    ModelConfig cfg;  // reference configuration
    Model m(cfg, 7);
    rng::SplitMix64 gen(rng::mix(3, 4));
    auto logits = m.logits(constant(Tensor::gaussian({67, 300}, gen)), RunContext::inference());
    ASSERT_EQ(logits->value.numel(), 16u);
    EXPECT_TRUE(logits->value.all_finite());
}

TEST(Model, SameConfigAndSeedGiveIdenticalParameters) {
    Model a(tiny_config(Variant::kDkConv), 99);
    Model b(tiny_config(Variant::kDkConv), 99);
    const auto ra = a.registry(), rb = b.registry();
    ASSERT_EQ(ra.params.size(), rb.params.size());
    for (std::size_t i = 0; i < ra.params.size(); ++i) {
        EXPECT_EQ(ra.params[i].name, rb.params[i].name);
        EXPECT_EQ(ra.params[i].var->value.data(), rb.params[i].var->value.data());
    }
}

TEST(Model, ForwardIsDeterministic) {
    Model m(tiny_config(Variant::kGlobalLocalMs), 5);
    rng::SplitMix64 gen(rng::mix(5, 6));
    Tensor x = Tensor::gaussian({5, 18}, gen);
    auto l1 = m.logits(constant(x), RunContext::inference());
    auto l2 = m.logits(constant(x), RunContext::inference());
    EXPECT_EQ(l1->value.data(), l2->value.data());
}

TEST(Model, EmbeddingDimFixedForAnyLength) {
    Model m(tiny_config(Variant::kGlobalLocalMs), 5);
    rng::SplitMix64 gen(rng::mix(7, 8));
    for (std::size_t frames : {m.min_frames(), m.min_frames() + 13, m.min_frames() + 131}) {
        auto e = m.embedding(constant(Tensor::gaussian({5, frames}, gen)),
                             RunContext::inference());
        EXPECT_EQ(e->value.numel(), 6u);
    }
}

// Frozen reference totals, hand-derived from the layer shapes:
//   stem 67*128*11+128 + BN 256                        =    94,720
//   baseline dense layer at width C: 130*C + 25,024
//   transitions 132,352 and 526,848; tail 797,696
// baseline 3,175,168; dkconv adds 18 * 30,928; local-ms swaps each dense
// layer to 66*C + 6,156; global-local-ms widens the first embedding dense
// by 512*512 over local-ms.
TEST(Model, ReferenceParameterTotalsMatchHandDerivation) {
    const auto count = [](Variant v) {
        ModelConfig cfg;
        cfg.variant = v;
        return Model(cfg, 1).count_params();
    };
    const auto baseline = count(Variant::kBaseline);
    const auto dkconv = count(Variant::kDkConv);
    const auto local = count(Variant::kLocalMs);
    const auto global = count(Variant::kGlobalLocalMs);

    EXPECT_EQ(baseline.total, 3175168u);
    EXPECT_EQ(dkconv.total, 3731872u);
    EXPECT_EQ(local.total, 2258008u);
    EXPECT_EQ(global.total, 2520152u);

    // Strict size ordering across the ablation: local < global < baseline < dk.
    EXPECT_LT(local.total, global.total);
    EXPECT_LT(global.total, baseline.total);
    EXPECT_LT(baseline.total, dkconv.total);
}

TEST(Model, PerLayerCountsSumToTotal) {
    Model m(tiny_config(Variant::kGlobalLocalMs), 3);
    const auto report = m.count_params();
    std::size_t sum = 0;
    for (const auto& l : report.layers) sum += l.params;
    EXPECT_EQ(sum, report.total);
    EXPECT_EQ(report.total, m.registry().num_scalars());
}

TEST(Checkpoint, RoundTripForwardOutputsBitExact) {
    Model m(tiny_config(Variant::kGlobalLocalMs), 17);
    rng::SplitMix64 gen(rng::mix(17, 18));
    Tensor x = Tensor::gaussian({5, 24}, gen);
    // Give running stats non-default values so the round trip covers them.
    m.pooled(constant(x), RunContext::train());
    auto before = m.logits(constant(x), RunContext::inference());

    const std::string path = temp_path("dmsc_test_ckpt.dmsc");
    save_checkpoint(m, path);
    auto loaded = load_checkpoint(path);
    auto after = loaded->logits(constant(x), RunContext::inference());
    ASSERT_EQ(before->value.numel(), after->value.numel());
    for (std::size_t i = 0; i < before->value.numel(); ++i) {
        EXPECT_EQ(before->value.at(i), after->value.at(i));  // 0 ulps
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, CorruptMagicRejected) {
    Model m(tiny_config(Variant::kBaseline), 17);
    const std::string path = temp_path("dmsc_test_badmagic.dmsc");
    save_checkpoint(m, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
}

TEST(Checkpoint, ChecksumFailureRejected) {
    Model m(tiny_config(Variant::kBaseline), 17);
    const std::string path = temp_path("dmsc_test_badcrc.dmsc");
    save_checkpoint(m, path);
    {
        // Flip one payload byte; the trailing CRC must catch it.
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        char c = 0;
        f.seekg(64);
        f.read(&c, 1);
        c = static_cast<char>(c ^ 0x40);
        f.seekp(64);
        f.write(&c, 1);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
}

TEST(Checkpoint, TruncationRejectedWithOffset) {
    Model m(tiny_config(Variant::kBaseline), 17);
    const std::string path = temp_path("dmsc_test_trunc.dmsc");
    save_checkpoint(m, path);
    const auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    try {
        load_checkpoint(path);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
    }
    std::remove(path.c_str());
}

TEST(Checkpoint, VersionMismatchRejected) {
    Model m(tiny_config(Variant::kBaseline), 17);
    const std::string path = temp_path("dmsc_test_badver.dmsc");
    save_checkpoint(m, path);
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v2[4] = {2, 0, 0, 0};
        f.write(v2, 4);
    }
    EXPECT_THROW(load_checkpoint(path), FormatError);
    std::remove(path.c_str());
}

// File size follows exactly from the format arithmetic:
// 8 (magic+version) + 4+len(config) + 4 (entry count)
// + per entry (4+len(name) + 4 + 4*rank + 8*numel) + 4 (crc).
TEST(Checkpoint, FileSizeMatchesFormatArithmetic) {
    Model m(tiny_config(Variant::kLocalMs), 29);
    const std::string path = temp_path("dmsc_test_size.dmsc");
    save_checkpoint(m, path);

    KvDoc doc = m.config().to_kv();
    doc.set_u64("model.seed", m.seed());
    std::size_t expected = 8 + 4 + doc.serialize().size() + 4 + 4;
    const auto reg = m.registry();
    const auto entry_bytes = [](const std::string& name, const Tensor& t) {
        return 4 + name.size() + 4 + 4 * t.rank() + 8 * t.numel();
    };
    for (const auto& p : reg.params) expected += entry_bytes(p.name, p.var->value);
    for (const auto& b : reg.buffers) expected += entry_bytes(b.name, *b.tensor);
    EXPECT_EQ(std::filesystem::file_size(path), expected);
    std::remove(path.c_str());
}
