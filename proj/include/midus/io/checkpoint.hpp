// Copyright 2026 The MIDUS Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef MIDUS_IO_CHECKPOINT_HPP_
#define MIDUS_IO_CHECKPOINT_HPP_

// Layout (little-endian):
//   8 bytes   magic "MIDUSCKP"
//   u32       format version
//   u64       header length in bytes
//   header    JSON: architecture, masks, config snapshot, tensor table, checksum
//   body      raw tensors in table order, element type per "dtype"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "midus/core/parameters.hpp"

namespace midus {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'M', 'I', 'D', 'U', 'S', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// FNV-1a 64-bit.
inline std::uint64_t fnv1a(const unsigned char* data, std::size_t n,
                           std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ull;
  }
  return h;
}

template <Real T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

/// A checkpoint read back from disk, before conversion to a model.
struct CheckpointHeader {
  nlohmann::json json;
  std::string config_ini;  // empty when saved without a config
};

namespace detail {

template <Real T>
nlohmann::json describe_block(const Block<T>& b) {
  if (const auto* mb = std::get_if<MemoryBlockParams<T>>(&b)) {
    const auto& tg = mb->layer.toggles;
    return {{"kind", std::string(to_string(mb->layer.kind))},
            {"heads", mb->cfg.heads},
            {"sub_keys", mb->cfg.sub_keys},
            {"top_k", mb->cfg.top_k},
            {"model_dim", mb->cfg.model_dim},
            {"query_batchnorm", tg.query_batchnorm},
            {"query_layernorm", tg.query_layernorm},
            {"internal_residual", tg.internal_residual},
            {"output_projection", tg.output_projection}};
  }
  return {{"kind", "transformer"}};
}

template <typename F>
void visit_all(auto& spec, F&& f) {
  visit_parameters(spec, [&](const ParamInfo& info, auto& t) { f(info.name, t); });
  visit_buffers(spec, [&](const std::string& name, auto& t) { f(name, t); });
}

}  // namespace detail

/// Writes `spec` (and optionally the INI text of its run configuration).
template <Real T>
void save_checkpoint(const std::string& path, const ModelSpec<T>& spec,
                     const std::string& config_ini = {}) {
  nlohmann::json header;
  header["dtype"] = dtype_name<T>();
  header["dims"] = {{"vocab", spec.dims.vocab},
                    {"d_model", spec.dims.d_model},
                    {"heads", spec.dims.heads},
                    {"d_ff", spec.dims.d_ff}};
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : spec.blocks) blocks.push_back(detail::describe_block(b));
  header["blocks"] = blocks;
  header["trainable"] = spec.trainable;
  header["inserted"] = spec.inserted;
  header["train_embeddings"] = spec.train_embeddings;
  header["config"] = config_ini;

  std::string body;
  nlohmann::json table = nlohmann::json::array();
  detail::visit_all(spec, [&](const std::string& name, const auto& t) {
    const auto bytes = std::as_bytes(t.data());
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", body.size()}});
    body.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  header["tensors"] = table;
  header["body_bytes"] = body.size();
  header["checksum"] =
      fnv1a(reinterpret_cast<const unsigned char*>(body.data()), body.size());

  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("checkpoint: cannot write '" + path + "'");
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof(kCheckpointVersion));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!out) throw Error("checkpoint: write failed for '" + path + "'");
}

namespace detail {

struct RawCheckpoint {
  nlohmann::json header;
  std::string body;
};

inline RawCheckpoint read_raw_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ConfigError("checkpoint: '" + path + "' is not a checkpoint file");
  }
  if (version != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported format version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: malformed header: " + std::string(e.what()));
  }
  const std::size_t body_bytes = raw.header.at("body_bytes").get<std::size_t>();
  raw.body.resize(body_bytes);
  in.read(raw.body.data(), static_cast<std::streamsize>(body_bytes));
  if (!in) throw ConfigError("checkpoint: truncated body in '" + path + "'");
  const auto sum = fnv1a(reinterpret_cast<const unsigned char*>(raw.body.data()), body_bytes);
  if (sum != raw.header.at("checksum").get<std::uint64_t>()) {
    throw ConfigError("checkpoint: checksum mismatch in '" + path + "'");
  }
  return raw;
}

template <Real T>
ModelSpec<T> skeleton_from_header(const nlohmann::json& h) {
  ModelDims dims;
  dims.vocab = h.at("dims").at("vocab");
  dims.d_model = h.at("dims").at("d_model");
  dims.heads = h.at("dims").at("heads");
  dims.d_ff = h.at("dims").at("d_ff");
  Rng rng(0);
  ModelSpec<T> spec = ModelSpec<T>::random(dims, 0, rng);
  for (const auto& b : h.at("blocks")) {
    const std::string kind = b.at("kind");
    if (kind == "transformer") {
      spec.blocks.emplace_back(
          TransformerBlockParams<T>::random(dims.d_model, dims.heads, dims.d_ff, rng, 0.0));
      continue;
    }
    MemoryLayerKind layer{parse_memory_kind(kind), {}};
    layer.toggles.query_batchnorm = b.at("query_batchnorm");
    layer.toggles.query_layernorm = b.at("query_layernorm");
    layer.toggles.internal_residual = b.at("internal_residual");
    layer.toggles.output_projection = b.at("output_projection");
    MemoryConfig cfg;
    cfg.heads = b.at("heads");
    cfg.sub_keys = b.at("sub_keys");
    cfg.top_k = b.at("top_k");
    cfg.model_dim = b.at("model_dim");
    cfg.validate();
    const auto attn = AttentionParams<T>::random(dims.d_model, dims.heads, rng, 0.0, true);
    spec.blocks.emplace_back(MemoryBlockParams<T>::from_attention(
        layer, cfg, Tensor<T>({dims.d_model}, T{1}), attn, rng));
  }
  spec.trainable = h.at("trainable").get<std::vector<bool>>();
  spec.inserted = h.at("inserted").get<std::vector<bool>>();
  spec.train_embeddings = h.at("train_embeddings");
  return spec;
}

template <typename Src, Real T>
void fill_from(Tensor<T>& t, const char* bytes) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    t[i] = static_cast<T>(v);
  }
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  auto raw = detail::read_raw_checkpoint(path);
  return {raw.header, raw.header.value("config", std::string{})};
}

/// Loads a checkpoint as precision T, converting if it was saved in the other.
template <Real T>
ModelSpec<T> load_checkpoint(const std::string& path) {
  const auto raw = detail::read_raw_checkpoint(path);
  ModelSpec<T> spec;
  try {
    spec = detail::skeleton_from_header<T>(raw.header);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("checkpoint: malformed header: " + std::string(e.what()));
  }
  const std::string dtype = raw.header.at("dtype");
  const std::size_t width = dtype == "f32" ? 4 : 8;
  std::map<std::string, nlohmann::json> table;
  for (const auto& e : raw.header.at("tensors")) table[e.at("name")] = e;
  std::size_t used = 0;
  detail::visit_all(spec, [&](const std::string& name, auto& t) {
    const auto it = table.find(name);
    if (it == table.end()) throw ConfigError("checkpoint: missing tensor '" + name + "'");
    const Shape shape = it->second.at("shape").template get<Shape>();
    if (shape != t.shape()) {
      throw ConfigError("checkpoint: tensor '" + name + "' has shape " + shape_string(shape) +
                        ", architecture expects " + shape_string(t.shape()));
    }
    const std::size_t offset = it->second.at("offset");
    if (offset + t.size() * width > raw.body.size()) {
      throw ConfigError("checkpoint: tensor '" + name + "' overruns the body");
    }
    const char* src = raw.body.data() + offset;
    if (width == 4) detail::fill_from<float>(t, src);
    else detail::fill_from<double>(t, src);
    ++used;
  });
  if (used != table.size()) throw ConfigError("checkpoint: unexpected extra tensors");
  spec.validate();
  return spec;
}

}  // namespace midus

#endif  // MIDUS_IO_CHECKPOINT_HPP_
