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
//
// Checkpoint format ("DMSC"):
//   magic "DMSC" | version u32 | config length u32 + UTF-8 key/value text |
//   entry count u32 | per entry: name length u32 + name, rank u32, dims u32
//   each, raw little-endian float64 payload | trailing CRC32.
// Entries cover trainable parameters and BN running statistics, so a loaded
// model reproduces forward outputs bit-exactly.

#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>

#include "dmsc/detail/binio.hpp"
#include "dmsc/kvconfig.hpp"
#include "dmsc/model.hpp"

namespace dmsc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void append_tensor_entry(detail::ByteWriter& w, const std::string& name, const Tensor& t) {
    w.sized_string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.f64(v);
}

/// Serializes the model plus optional extra document entries (e.g. trainer
/// state under "trainer." keys).
inline void save_checkpoint(const Model& model, const std::string& path,
                            const KvDoc& extra = KvDoc()) {
    KvDoc doc = model.config().to_kv();
    doc.set_u64("model.seed", model.seed());
    for (const auto& [k, v] : extra.entries()) doc.set(k, v);

    const ParamRegistry reg = model.registry();
    detail::ByteWriter w;
    w.bytes("DMSC");
    w.u32(kCheckpointVersion);
    w.sized_string(doc.serialize());
    w.u32(static_cast<std::uint32_t>(reg.params.size() + reg.buffers.size()));
    for (const auto& p : reg.params) append_tensor_entry(w, p.name, p.var->value);
    for (const auto& b : reg.buffers) append_tensor_entry(w, b.name, *b.tensor);
    w.finish_with_crc();
    w.write_file(path);
}

/// Loads a checkpoint, rebuilding the model from the embedded config. The
/// full embedded document (including any "trainer." entries) is returned
/// through doc_out when provided.
inline std::unique_ptr<Model> load_checkpoint(const std::string& path, KvDoc* doc_out = nullptr) {
    auto r = detail::ByteReader::from_file(path);
    r.expect_magic("DMSC");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    const KvDoc doc = KvDoc::parse(r.sized_string("config"));
    const ModelConfig config = ModelConfig::from_kv(doc);
    const std::uint64_t seed = doc.get_u64_or("model.seed", 0);

    const std::uint32_t entries = r.u32();
    std::map<std::string, Tensor> loaded;
    for (std::uint32_t i = 0; i < entries; ++i) {
        const std::string name = r.sized_string("entry name");
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 4) {
            throw FormatError(path + ": entry '" + name + "' has invalid rank " +
                              std::to_string(rank) + " at byte offset " +
                              std::to_string(r.offset()));
        }
        std::vector<std::size_t> shape;
        std::size_t numel = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape.push_back(r.u32());
            numel *= shape.back();
        }
        std::vector<double> data(numel);
        for (std::size_t j = 0; j < numel; ++j) data[j] = r.f64();
        loaded.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
    r.verify_trailing_crc();

    auto model = std::make_unique<Model>(config, seed);
    const ParamRegistry reg = model->registry();
    const auto take = [&](const std::string& name, const Tensor& current) -> Tensor {
        auto it = loaded.find(name);
        if (it == loaded.end()) {
            throw FormatError(path + ": checkpoint is missing tensor '" + name + "'");
        }
        if (!(it->second.shape() == current.shape())) {
            throw FormatError(path + ": tensor '" + name + "' has shape " +
                              it->second.shape_str() + ", model expects " + current.shape_str());
        }
        Tensor out = std::move(it->second);
        loaded.erase(it);
        return out;
    };
    for (const auto& p : reg.params) p.var->value = take(p.name, p.var->value);
    for (const auto& b : reg.buffers) *b.tensor = take(b.name, *b.tensor);
    if (!loaded.empty()) {
        throw FormatError(path + ": checkpoint holds unknown tensor '" + loaded.begin()->first +
                          "'");
    }
    if (doc_out) *doc_out = doc;
    return model;
}

}  // namespace dmsc
