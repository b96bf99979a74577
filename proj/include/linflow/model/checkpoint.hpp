#pragma once

// Model checkpoint: magic "LVLB", u32 version, u32 n_layers/d_model/seq_len/
// d_state/mlp_ratio, one layer-kind byte per layer, u32 blob count, then each
// non-score parameter as (u32 numel, f32 data) in declaration order, and
// finally one f32 selection score per layer.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "linflow/io/binary.hpp"
#include "linflow/model/toy_transformer.hpp"

namespace linflow::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_checkpoint(std::ostream& os, const ToyTransformer<T>& m) {
  const auto& c = m.config();
  io::put_magic(os, "LVLB");
  io::put<std::uint32_t>(os, kCheckpointVersion);
  for (std::size_t v : {c.n_layers, c.d_model, c.seq_len, c.d_state, c.mlp_ratio}) {
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  }
  for (LayerKind k : m.layer_kinds()) io::put<std::uint8_t>(os, static_cast<std::uint8_t>(k));
  std::uint32_t blobs = 0;
  for (const auto& p : m.parameters()) blobs += p.unit_interval ? 0 : 1;
  io::put<std::uint32_t>(os, blobs);
  for (const auto& p : m.parameters()) {
    if (p.unit_interval) continue;
    io::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.value.numel()));
    for (T v : p.value.values()) io::put<float>(os, static_cast<float>(v));
  }
  for (T r : m.scores()) io::put<float>(os, static_cast<float>(r));
}

template <typename T>
ToyTransformer<T> read_checkpoint(std::istream& is) {
  io::expect_magic(is, "LVLB");
  const auto version = io::get<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig c;
  c.n_layers = io::get<std::uint32_t>(is, "n_layers");
  c.d_model = io::get<std::uint32_t>(is, "d_model");
  c.seq_len = io::get<std::uint32_t>(is, "seq_len");
  c.d_state = io::get<std::uint32_t>(is, "d_state");
  c.mlp_ratio = io::get<std::uint32_t>(is, "mlp_ratio");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  std::vector<LayerKind> kinds(c.n_layers);
  for (auto& k : kinds) {
    const auto raw = io::get<std::uint8_t>(is, "layer kind");
    if (raw > 2) throw io::FormatError("unknown layer kind " + std::to_string(raw));
    k = static_cast<LayerKind>(raw);
  }
  ToyTransformer<T> m = ToyTransformer<T>::from_layout(c, kinds);
  std::uint32_t expected = 0;
  for (const auto& p : m.parameters()) expected += p.unit_interval ? 0 : 1;
  if (io::get<std::uint32_t>(is, "blob count") != expected) throw io::FormatError("blob count mismatch");
  for (auto& p : m.parameters()) {
    if (p.unit_interval) continue;
    if (io::get<std::uint32_t>(is, "blob size") != p.value.numel()) {
      throw io::FormatError("blob size mismatch for " + p.name);
    }
    for (auto& v : p.value.values()) v = static_cast<T>(io::get<float>(is, p.name.c_str()));
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const float r = io::get<float>(is, "score");
    if (kinds[l] == LayerKind::kMixed) m.set_score(l, static_cast<T>(r));
  }
  io::expect_end(is);
  return m;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ToyTransformer<T>& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(os, m);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
ToyTransformer<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint<T>(is);
}

}  // namespace linflow::model
