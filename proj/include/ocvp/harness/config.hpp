// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "ocvp/core/kv.hpp"
#include "ocvp/oaae/config.hpp"
#include "ocvp/predictor/config.hpp"
#include "ocvp/synthdata/synthdata.hpp"

namespace ocvp::harness {

/// Everything a run needs, serializable to canonical key-value text whose
/// SHA-256 stamps every artifact. The output directory is deliberately not
/// part of the config (and so not of the hash).
struct ExperimentConfig {
  std::string preset = "bounce2";
  synthdata::SceneSchema schema;
  synthdata::PhysicsParams physics;
  synthdata::ClipSpec clip_spec;
  int n_clips = 500;

  oaae::OAAEConfig oaae;
  predictor::PredictorConfig pred;  // per-instance settings; variant chosen per stage

  int64_t oaae_steps = 1500;
  double oaae_lr = 1e-3;
  int oaae_batch = 8;
  double oaae_warmup_frac = 0.05;
  int64_t pred_steps = 600;
  double pred_lr = 1e-3;
  double pred_warmup_frac = 0.05;
  double noise_fraction = 0.1;

  std::vector<double> temperatures = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int eval_subsets = 10;
  int eval_test_clips = 20;
  double collision_fraction = 0.25;

  uint64_t seed = 0;

  core::KvMap to_kv() const;
  std::string canonical_text() const { return to_kv().canonical_text(); }
  std::string hash() const;

  /// Sub-hashes used for per-stage artifact stamping.
  std::string dataset_hash() const;
  std::string oaae_stage_hash(bool decomposed) const;
  std::string predictor_stage_hash(predictor::Variant variant) const;

  void validate() const;

  /// Known presets: bounce2, bounce3, bounce-real-ish.
  static ExperimentConfig from_preset(const std::string& name);

  /// Preset defaults, then file entries, then overrides; unknown or malformed
  /// keys are all reported at once.
  static ExperimentConfig resolve(const std::string& preset, const core::KvMap& file_entries,
                                  const core::KvMap& overrides);
};

std::vector<int> train_clip_indices(const ExperimentConfig& cfg);
std::vector<int> test_clip_indices(const ExperimentConfig& cfg);

}  // namespace ocvp::harness
