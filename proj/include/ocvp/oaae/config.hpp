// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ocvp/core/kv.hpp"
#include "ocvp/synthdata/synthdata.hpp"

namespace ocvp::oaae {

struct OAAEConfig {
  int embed_dim = 16;                       // d, per instance
  int codebook_size = 128;                  // K, entries per class
  std::vector<int> conv_hidden_dims = {32, 64};
  int n_residual_layers = 2;
  int downsample_factor = 4;                // pixels per latent cell
  double alpha = 1.0;                       // feature-loss weight
  double beta = 0.25;                       // commitment weight
  bool decomposed = true;

  int n_stages() const { return static_cast<int>(conv_hidden_dims.size()); }

  void validate(int frame_h, int frame_w) const;
  void to_kv(core::KvMap& kv, const std::string& prefix) const;
  static OAAEConfig from_kv(const core::KvMap& kv, const std::string& prefix,
                            std::vector<std::string>* errors);
};

inline void OAAEConfig::validate(int frame_h, int frame_w) const {
  std::vector<std::string> bad;
  if (embed_dim < 4) bad.push_back("embed_dim >= 4");
  if (codebook_size < 2) bad.push_back("codebook_size >= 2");
  if (n_residual_layers < 0) bad.push_back("n_residual_layers >= 0");
  int f = 1;
  for (int i = 0; i < n_stages(); ++i) f *= 2;
  if (f != downsample_factor) bad.push_back("downsample_factor == 2^len(conv_hidden_dims)");
  if (downsample_factor <= 0 || frame_h % downsample_factor != 0 || frame_w % downsample_factor != 0)
    bad.push_back("downsample_factor divides frame size");
  for (int c : conv_hidden_dims)
    if (c < 1) bad.push_back("conv_hidden_dims positive");
  if (!bad.empty()) {
    std::string msg = "oaae config invalid:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw std::runtime_error(msg);
  }
}

inline void OAAEConfig::to_kv(core::KvMap& kv, const std::string& p) const {
  kv.set_int(p + "embed_dim", embed_dim);
  kv.set_int(p + "codebook_size", codebook_size);
  std::string dims;
  for (size_t i = 0; i < conv_hidden_dims.size(); ++i) {
    if (i) dims += ";";
    dims += std::to_string(conv_hidden_dims[i]);
  }
  kv.set(p + "conv_hidden_dims", dims);
  kv.set_int(p + "n_residual_layers", n_residual_layers);
  kv.set_int(p + "downsample_factor", downsample_factor);
  kv.set_double(p + "alpha", alpha);
  kv.set_double(p + "beta", beta);
  kv.set_bool(p + "decomposed", decomposed);
}

inline OAAEConfig OAAEConfig::from_kv(const core::KvMap& kv, const std::string& p,
                                      std::vector<std::string>* errors) {
  OAAEConfig d;
  OAAEConfig out;
  out.embed_dim = static_cast<int>(kv.get_int(p + "embed_dim", d.embed_dim, errors));
  out.codebook_size = static_cast<int>(kv.get_int(p + "codebook_size", d.codebook_size, errors));
  if (auto dims = kv.get(p + "conv_hidden_dims")) {
    out.conv_hidden_dims.clear();
    size_t pos = 0;
    while (pos <= dims->size()) {
      size_t next = dims->find(';', pos);
      if (next == std::string::npos) next = dims->size();
      if (next > pos) out.conv_hidden_dims.push_back(std::stoi(dims->substr(pos, next - pos)));
      pos = next + 1;
    }
  }
  out.n_residual_layers = static_cast<int>(kv.get_int(p + "n_residual_layers", d.n_residual_layers, errors));
  out.downsample_factor = static_cast<int>(kv.get_int(p + "downsample_factor", d.downsample_factor, errors));
  out.alpha = kv.get_double(p + "alpha", d.alpha, errors);
  out.beta = kv.get_double(p + "beta", d.beta, errors);
  out.decomposed = kv.get_bool(p + "decomposed", d.decomposed, errors);
  return out;
}

/// Non-decomposed (single-slot) twin used by SiS: one encoder/codebook at
/// embed dim N*d on raw frames, same downsampling stack.
inline OAAEConfig sis_config(const OAAEConfig& base, const synthdata::SceneSchema& schema) {
  OAAEConfig cfg = base;
  cfg.embed_dim = base.embed_dim * schema.total_slots();
  cfg.decomposed = false;
  return cfg;
}

/// Schema seen by a non-decomposed model: a single slot covering the frame.
inline synthdata::SceneSchema monolithic_schema() {
  synthdata::SceneSchema s;
  s.classes = {"background"};
  s.slots_per_class = {1};
  return s;
}

}  // namespace ocvp::oaae
