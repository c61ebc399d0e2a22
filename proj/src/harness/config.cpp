// SPDX-License-Identifier: Apache-2.0
#include "ocvp/harness/config.hpp"

#include <algorithm>
#include <sstream>

#include "ocvp/core/hash.hpp"

namespace ocvp::harness {

using core::KvMap;

core::KvMap ExperimentConfig::to_kv() const {
  KvMap kv;
  kv.set("preset", preset);
  kv.set("schema", schema.to_string());
  physics.to_kv(kv, "physics.");
  clip_spec.to_kv(kv, "clip.");
  kv.set_int("data.n_clips", n_clips);
  oaae.to_kv(kv, "oaae.");
  kv.erase("oaae.decomposed");  // the pipeline trains both the decomposed and SiS twin
  // predictor fields minus the variant (all three variants are built per run)
  {
    KvMap tmp;
    pred.to_kv(tmp, "predictor.");
    tmp.erase("predictor.variant");
    for (const auto& [k, v] : tmp.entries()) kv.set(k, v);
  }
  kv.set_int("train.oaae_steps", oaae_steps);
  kv.set_double("train.oaae_lr", oaae_lr);
  kv.set_int("train.oaae_batch", oaae_batch);
  kv.set_double("train.oaae_warmup_frac", oaae_warmup_frac);
  kv.set_int("train.pred_steps", pred_steps);
  kv.set_double("train.pred_lr", pred_lr);
  kv.set_double("train.pred_warmup_frac", pred_warmup_frac);
  kv.set_double("train.noise_fraction", noise_fraction);
  std::string temps;
  for (size_t i = 0; i < temperatures.size(); ++i) {
    if (i) temps += ";";
    temps += core::format_double(temperatures[i]);
  }
  kv.set("eval.temperatures", temps);
  kv.set_int("eval.subsets", eval_subsets);
  kv.set_int("eval.test_clips", eval_test_clips);
  kv.set_double("eval.collision_fraction", collision_fraction);
  kv.set_int("seed", static_cast<int64_t>(seed));
  return kv;
}

std::string ExperimentConfig::hash() const { return core::sha256_hex(canonical_text()); }

std::string ExperimentConfig::dataset_hash() const {
  synthdata::DatasetManifest m;
  m.name = preset;
  m.schema = schema;
  m.physics = physics;
  m.clip_spec = clip_spec;
  m.n_clips = n_clips;
  m.seed = seed;
  return core::sha256_hex(m.to_kv(false).canonical_text());
}

std::string ExperimentConfig::oaae_stage_hash(bool decomposed) const {
  KvMap kv;
  kv.set("dataset", dataset_hash());
  oaae.to_kv(kv, "oaae.");
  kv.set_bool("oaae.decomposed", decomposed);
  kv.set_int("train.steps", oaae_steps);
  kv.set_double("train.lr", oaae_lr);
  kv.set_int("train.batch", oaae_batch);
  kv.set_double("train.warmup_frac", oaae_warmup_frac);
  kv.set_int("eval.test_clips", eval_test_clips);
  kv.set_int("seed", static_cast<int64_t>(seed));
  return core::sha256_hex(kv.canonical_text());
}

std::string ExperimentConfig::predictor_stage_hash(predictor::Variant variant) const {
  KvMap kv;
  kv.set("oaae_stage", oaae_stage_hash(variant != predictor::Variant::SiS));
  predictor::PredictorConfig pv = pred;
  pv.variant = variant;
  pv.to_kv(kv, "predictor.");
  kv.set_int("train.steps", pred_steps);
  kv.set_double("train.lr", pred_lr);
  kv.set_double("train.warmup_frac", pred_warmup_frac);
  kv.set_double("train.noise_fraction", noise_fraction);
  kv.set_int("seed", static_cast<int64_t>(seed));
  return core::sha256_hex(kv.canonical_text());
}

void ExperimentConfig::validate() const {
  std::vector<std::string> bad;
  try {
    schema.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  try {
    physics.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  try {
    clip_spec.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  try {
    oaae.validate(clip_spec.height, clip_spec.width);
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  try {
    pred.validate();
  } catch (const std::exception& e) {
    bad.push_back(e.what());
  }
  if (n_clips < 0) bad.push_back("data.n_clips >= 0");
  if (eval_test_clips < 0 || eval_test_clips > n_clips) bad.push_back("eval.test_clips in [0, n_clips]");
  if (eval_subsets < 1) bad.push_back("eval.subsets >= 1");
  if (temperatures.empty()) bad.push_back("eval.temperatures nonempty");
  for (double t : temperatures)
    if (t <= 0 || t > 10) bad.push_back("eval.temperatures in (0,10]");
  if (pred.context_frames + pred.horizon > clip_spec.n_frames)
    bad.push_back("context_frames + horizon <= clip.n_frames");
  if (oaae_steps < 0 || pred_steps < 0) bad.push_back("train steps >= 0");
  if (!bad.empty()) {
    std::string msg = "config invalid:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw std::runtime_error(msg);
  }
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.preset = name;
  if (name == "bounce2" || name == "bounce3") {
    cfg.schema.classes = {"background", "ball"};
    cfg.schema.slots_per_class = {1, name == "bounce2" ? 2 : 3};
    cfg.physics.summon_radius = 5.0;
    cfg.physics.min_summon_distance = 2.0;
    cfg.physics.max_initial_speed = 5.0;
    cfg.physics.ground_friction = 0.3;
    cfg.physics.restitution = 0.9;
    cfg.physics.class_restitution = {-1, 0.8};  // rubber-ish foreground
    cfg.physics.object_radius_min = 0.8;
    cfg.physics.object_radius_max = 1.3;
    cfg.physics.dt = 0.15;
    cfg.clip_spec.height = cfg.clip_spec.width = 32;
    cfg.clip_spec.world_to_pixel = 2.5;
    cfg.clip_spec.n_frames = 10;
  } else if (name == "bounce-real-ish") {
    cfg.schema.classes = {"background", "ball_small", "ball_large"};
    cfg.schema.slots_per_class = {1, 2, 2};
    cfg.physics.summon_radius = 8.0;
    cfg.physics.min_summon_distance = 4.0;
    cfg.physics.max_initial_speed = 7.0;
    cfg.physics.ground_friction = 0.3;
    cfg.physics.restitution = 0.9;
    cfg.physics.class_restitution = {-1, 0.8, 0.5};
    cfg.physics.object_radius_min = 0.9;
    cfg.physics.object_radius_max = 1.6;
    cfg.physics.dt = 0.15;
    cfg.clip_spec.height = cfg.clip_spec.width = 64;
    cfg.clip_spec.world_to_pixel = 3.2;
    cfg.clip_spec.n_frames = 10;
    cfg.n_clips = 300;
  } else {
    throw std::runtime_error("unknown preset '" + name + "' (expected bounce2|bounce3|bounce-real-ish)");
  }
  return cfg;
}

namespace {

ExperimentConfig apply_kv(const ExperimentConfig& base, const KvMap& kv,
                          std::vector<std::string>& errors) {
  ExperimentConfig out = base;
  out.preset = kv.get_string("preset", base.preset, &errors);
  if (auto s = kv.get("schema")) {
    try {
      out.schema = synthdata::SceneSchema::from_string(*s);
    } catch (const std::exception& e) {
      errors.push_back(std::string("schema: ") + e.what());
    }
  }
  {
    KvMap merged;  // getters need defaults from `base`, so serialize then overlay
    base.physics.to_kv(merged, "physics.");
    base.clip_spec.to_kv(merged, "clip.");
    base.oaae.to_kv(merged, "oaae.");
    predictor::PredictorConfig bp = base.pred;
    bp.to_kv(merged, "predictor.");
    for (const auto& [k, v] : kv.entries()) merged.set(k, v);
    out.physics = synthdata::PhysicsParams::from_kv(merged, "physics.", &errors);
    out.clip_spec = synthdata::ClipSpec::from_kv(merged, "clip.", &errors);
    out.oaae = oaae::OAAEConfig::from_kv(merged, "oaae.", &errors);
    out.pred = predictor::PredictorConfig::from_kv(merged, "predictor.", &errors);
    out.pred.variant = base.pred.variant;
  }
  out.oaae.decomposed = true;
  out.n_clips = static_cast<int>(kv.get_int("data.n_clips", base.n_clips, &errors));
  out.oaae_steps = kv.get_int("train.oaae_steps", base.oaae_steps, &errors);
  out.oaae_lr = kv.get_double("train.oaae_lr", base.oaae_lr, &errors);
  out.oaae_batch = static_cast<int>(kv.get_int("train.oaae_batch", base.oaae_batch, &errors));
  out.oaae_warmup_frac = kv.get_double("train.oaae_warmup_frac", base.oaae_warmup_frac, &errors);
  out.pred_steps = kv.get_int("train.pred_steps", base.pred_steps, &errors);
  out.pred_lr = kv.get_double("train.pred_lr", base.pred_lr, &errors);
  out.pred_warmup_frac = kv.get_double("train.pred_warmup_frac", base.pred_warmup_frac, &errors);
  out.noise_fraction = kv.get_double("train.noise_fraction", base.noise_fraction, &errors);
  if (auto temps = kv.get("eval.temperatures")) {
    out.temperatures.clear();
    std::istringstream in(*temps);
    std::string part;
    while (std::getline(in, part, ';')) {
      try {
        out.temperatures.push_back(std::stod(part));
      } catch (...) {
        errors.push_back("eval.temperatures: malformed entry '" + part + "'");
      }
    }
  }
  out.eval_subsets = static_cast<int>(kv.get_int("eval.subsets", base.eval_subsets, &errors));
  out.eval_test_clips = static_cast<int>(kv.get_int("eval.test_clips", base.eval_test_clips, &errors));
  out.collision_fraction = kv.get_double("eval.collision_fraction", base.collision_fraction, &errors);
  out.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(base.seed), &errors));
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::resolve(const std::string& preset, const KvMap& file_entries,
                                           const KvMap& overrides) {
  std::vector<std::string> errors;
  ExperimentConfig cfg = from_preset(preset);

  KvMap merged = file_entries;
  for (const auto& [k, v] : overrides.entries()) merged.set(k, v);

  // reject unknown keys, all at once
  KvMap known = cfg.to_kv();
  known.set("physics.class_restitution", "");  // optional key, absent when empty
  for (const auto& [k, v] : merged.entries())
    if (!known.has(k)) errors.push_back(k + ": unknown key");

  cfg = apply_kv(cfg, merged, errors);
  if (!errors.empty()) {
    std::string msg = "config invalid:";
    for (const auto& e : errors) msg += " [" + e + "]";
    throw std::runtime_error(msg);
  }
  cfg.validate();
  return cfg;
}

std::vector<int> train_clip_indices(const ExperimentConfig& cfg) {
  std::vector<int> out;
  for (int i = 0; i < cfg.n_clips - cfg.eval_test_clips; ++i) out.push_back(i);
  return out;
}

std::vector<int> test_clip_indices(const ExperimentConfig& cfg) {
  std::vector<int> out;
  for (int i = cfg.n_clips - cfg.eval_test_clips; i < cfg.n_clips; ++i) out.push_back(i);
  return out;
}

}  // namespace ocvp::harness
