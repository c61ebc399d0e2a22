// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ocvp/core/kv.hpp"
#include "ocvp/core/tensor.hpp"

namespace ocvp::predictor {

enum class Variant { SCAT, SNCAT, SiS };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::SCAT: return "scat";
    case Variant::SNCAT: return "sncat";
    case Variant::SiS: return "sis";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "scat" || s == "SCAT") return Variant::SCAT;
  if (s == "sncat" || s == "SNCAT") return Variant::SNCAT;
  if (s == "sis" || s == "SiS" || s == "SIS") return Variant::SiS;
  throw std::runtime_error("unknown predictor variant '" + s + "' (expected scat|sncat|sis)");
}

struct PredictorConfig {
  Variant variant = Variant::SCAT;
  int model_dim = 32;   // per instance
  int n_heads = 4;
  int depth = 2;
  int ff_expansion = 2;
  double dropout = 0.1;
  int context_frames = 5;  // T
  int horizon = 5;         // M

  int max_frames() const { return context_frames + horizon; }

  void validate() const {
    std::vector<std::string> bad;
    if (model_dim < 1 || model_dim % n_heads != 0) bad.push_back("model_dim divisible by n_heads");
    if (depth < 1) bad.push_back("depth >= 1");
    if (ff_expansion < 1) bad.push_back("ff_expansion >= 1");
    if (dropout < 0 || dropout >= 1) bad.push_back("dropout in [0,1)");
    if (context_frames < 1 || horizon < 0) bad.push_back("context_frames >= 1, horizon >= 0");
    if (!bad.empty()) {
      std::string msg = "predictor config invalid:";
      for (const auto& b : bad) msg += " [" + b + "]";
      throw std::runtime_error(msg);
    }
  }

  void to_kv(core::KvMap& kv, const std::string& p) const {
    kv.set(p + "variant", variant_name(variant));
    kv.set_int(p + "model_dim", model_dim);
    kv.set_int(p + "n_heads", n_heads);
    kv.set_int(p + "depth", depth);
    kv.set_int(p + "ff_expansion", ff_expansion);
    kv.set_double(p + "dropout", dropout);
    kv.set_int(p + "context_frames", context_frames);
    kv.set_int(p + "horizon", horizon);
  }

  static PredictorConfig from_kv(const core::KvMap& kv, const std::string& p,
                                 std::vector<std::string>* errors) {
    PredictorConfig d;
    PredictorConfig out;
    out.variant = variant_from_name(kv.get_string(p + "variant", variant_name(d.variant), errors));
    out.model_dim = static_cast<int>(kv.get_int(p + "model_dim", d.model_dim, errors));
    out.n_heads = static_cast<int>(kv.get_int(p + "n_heads", d.n_heads, errors));
    out.depth = static_cast<int>(kv.get_int(p + "depth", d.depth, errors));
    out.ff_expansion = static_cast<int>(kv.get_int(p + "ff_expansion", d.ff_expansion, errors));
    out.dropout = kv.get_double(p + "dropout", d.dropout, errors);
    out.context_frames = static_cast<int>(kv.get_int(p + "context_frames", d.context_frames, errors));
    out.horizon = static_cast<int>(kv.get_int(p + "horizon", d.horizon, errors));
    return out;
  }
};

struct SamplerConfig {
  double temperature = 1.0;
  int horizon = 5;
  uint64_t seed = 0;
  bool argmax = false;

  void validate() const {
    if (!argmax) OCVP_CHECK(temperature > 0 && temperature <= 10.0, "sampler: temperature must be in (0,10]");
    OCVP_CHECK(horizon >= 0, "sampler: horizon must be >= 0");
  }
};

}  // namespace ocvp::predictor
