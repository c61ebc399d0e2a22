// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <utility>

#include "ocvp/core/checkpoint.hpp"
#include "ocvp/oaae/model.hpp"

namespace ocvp::oaae {

struct OaaeTrainOptions {
  int64_t steps = 1000;
  int batch_size = 8;
  double lr = 1e-3;
  double warmup_frac = 0.05;  // warm-up = 5% of the step budget
  uint64_t seed = 0;
  int log_every = 100;
};

/// Slot-major batch: per model slot a [B,3,H,W] tensor of masked pixels
/// (non-decomposed models get the raw frames in their single slot), plus the
/// target frames [B,3,H,W]. Optional pixel noise x <- clamp(x + mag*eps) is
/// applied to the inputs before masking; targets stay clean.
template <class T>
void build_slot_batch(const std::vector<std::pair<const synthdata::FrameU8*, const synthdata::MaskU8*>>& items,
                      const synthdata::SceneSchema& data_schema, bool decomposed,
                      std::vector<Tensor<T>>& slot_batches, Tensor<T>& frames,
                      Rng* noise_rng = nullptr, double noise_mag = 0.1) {
  OCVP_CHECK(!items.empty(), "build_slot_batch: empty batch");
  const int B = static_cast<int>(items.size());
  const int h = items[0].first->h, w = items[0].first->w;
  const int n_slots = decomposed ? data_schema.total_slots() : 1;
  slot_batches.assign(static_cast<size_t>(n_slots), Tensor<T>({B, 3, h, w}));
  frames = Tensor<T>({B, 3, h, w});
  std::vector<float> pix(static_cast<size_t>(h) * w * 3);
  for (int b = 0; b < B; ++b) {
    const auto& frame = *items[static_cast<size_t>(b)].first;
    const auto& mask = *items[static_cast<size_t>(b)].second;
    for (size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<float>(frame.rgb[i]) / 255.0f;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          frames.data[static_cast<size_t>(((b * 3 + c) * h + y) * w + x)] =
              static_cast<T>(pix[(static_cast<size_t>(y) * w + x) * 3 + c]);
    if (noise_rng)
      for (auto& v : pix)
        v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(noise_mag * noise_rng->normal())));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int slot = decomposed ? mask.ids[static_cast<size_t>(y) * w + x] : 0;
        for (int c = 0; c < 3; ++c)
          slot_batches[static_cast<size_t>(slot)].data[static_cast<size_t>(((b * 3 + c) * h + y) * w + x)] =
              static_cast<T>(pix[(static_cast<size_t>(y) * w + x) * 3 + c]);
      }
  }
}

template <class T>
struct OaaeTrainResult {
  OaaeModel<T> model;
  std::vector<double> loss_curve;  // loss_total per step (pre-update)
};

/// Single-threaded deterministic training over the given clips.
template <class T>
OaaeTrainResult<T> train_oaae(const synthdata::Dataset& dataset, const std::vector<int>& clip_indices,
                              const OAAEConfig& config, const OaaeTrainOptions& opt) {
  const auto& man = dataset.manifest();
  config.validate(man.clip_spec.height, man.clip_spec.width);
  const synthdata::SceneSchema model_schema = config.decomposed ? man.schema : monolithic_schema();
  OaaeTrainResult<T> result{OaaeModel<T>(config, model_schema, opt.seed), {}};
  OaaeModel<T>& model = result.model;

  std::vector<synthdata::Clip> clips;
  clips.reserve(clip_indices.size());
  for (int ci : clip_indices) clips.push_back(dataset.clip(ci));
  OCVP_CHECK(!clips.empty() || opt.steps == 0, "train_oaae: no training clips");

  std::vector<std::pair<int, int>> frame_index;  // (clip, frame)
  for (size_t c = 0; c < clips.size(); ++c)
    for (size_t f = 0; f < clips[c].frames.size(); ++f)
      frame_index.push_back({static_cast<int>(c), static_cast<int>(f)});

  core::Adam<T> optim(model.params());
  core::LrSchedule sched{opt.lr, static_cast<int64_t>(std::llround(opt.warmup_frac * static_cast<double>(opt.steps))),
                         opt.steps};
  Rng data_rng(Rng::derive_seed(opt.seed, 0x0aae));

  std::vector<size_t> order;
  size_t cursor = 0;
  auto next_item = [&]() {
    if (cursor >= order.size()) {
      order.resize(frame_index.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      data_rng.shuffle(order);
      cursor = 0;
    }
    return frame_index[order[cursor++]];
  };

  for (int64_t step = 0; step < opt.steps; ++step) {
    std::vector<std::pair<const synthdata::FrameU8*, const synthdata::MaskU8*>> items;
    for (int b = 0; b < opt.batch_size; ++b) {
      auto [c, f] = next_item();
      items.push_back({&clips[static_cast<size_t>(c)].frames[static_cast<size_t>(f)],
                       &clips[static_cast<size_t>(c)].masks[static_cast<size_t>(f)]});
    }
    std::vector<Tensor<T>> slot_batches;
    Tensor<T> frames;
    build_slot_batch(items, man.schema, config.decomposed, slot_batches, frames);

    Tape<T> tape;
    auto bound = model.bind(tape);
    auto fwd = oaae_forward(bound, slot_batches, frames);
    const double loss = static_cast<double>(fwd.losses.total.val().data[0]);
    if (!std::isfinite(loss)) {
      throw std::runtime_error(
          "train_oaae: aborted at step " + std::to_string(step) + ": non-finite loss (recon=" +
          core::format_double(static_cast<double>(fwd.losses.recon.val().data[0])) + ", feature=" +
          core::format_double(static_cast<double>(fwd.losses.feature.val().data[0])) + ", vq=" +
          core::format_double(static_cast<double>(fwd.losses.vq.val().data[0])) + ", commit=" +
          core::format_double(static_cast<double>(fwd.losses.commit.val().data[0])) + ")");
    }
    result.loss_curve.push_back(loss);
    model.params().zero_grad();
    tape.backward(fwd.losses.total);
    bound.p.collect_grads();
    optim.step(sched.at(step));
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

template <class T>
core::Checkpoint make_oaae_checkpoint(const OaaeModel<T>& model, const std::string& config_hash,
                                      int64_t step, const std::vector<double>& loss_curve) {
  core::Checkpoint ck;
  ck.meta.set("kind", "oaae");
  ck.meta.set("config_hash", config_hash);
  ck.meta.set("schema", model.schema().to_string());
  ck.meta.set_int("step", step);
  model.config().to_kv(ck.meta, "oaae.");
  for (const auto& p : model.params().params()) {
    core::NamedArray arr;
    arr.shape = p.value.shape;
    arr.data.resize(static_cast<size_t>(p.value.numel()));
    for (int64_t i = 0; i < p.value.numel(); ++i) arr.data[static_cast<size_t>(i)] = static_cast<double>(p.value.data[i]);
    ck.arrays.emplace(p.name, std::move(arr));
  }
  if (!loss_curve.empty())
    ck.arrays.emplace("loss_curve", core::NamedArray{{static_cast<int64_t>(loss_curve.size())}, loss_curve});
  return ck;
}

template <class T>
OaaeModel<T> oaae_from_checkpoint(const core::Checkpoint& ck, const std::string& expect_hash = "",
                                  bool force = false) {
  OCVP_CHECK(ck.meta.get_string("kind", "") == "oaae", "oaae checkpoint: wrong kind");
  const std::string stored_hash = ck.meta.get_string("config_hash", "");
  if (!expect_hash.empty() && stored_hash != expect_hash && !force)
    throw std::runtime_error("oaae checkpoint: config hash mismatch (stored " + stored_hash +
                             ", expected " + expect_hash + "); pass --force to override");
  std::vector<std::string> errors;
  OAAEConfig cfg = OAAEConfig::from_kv(ck.meta, "oaae.", &errors);
  OCVP_CHECK(errors.empty(), "oaae checkpoint: malformed config metadata");
  auto schema = synthdata::SceneSchema::from_string(ck.meta.get_string("schema", "background:1"));
  OaaeModel<T> model(cfg, schema, 0);
  for (auto& p : model.params().params()) {
    auto it = ck.arrays.find(p.name);
    OCVP_CHECK(it != ck.arrays.end(), "oaae checkpoint: missing array '" << p.name << "'");
    OCVP_CHECK(it->second.shape == p.value.shape, "oaae checkpoint: shape mismatch for '" << p.name << "'");
    for (int64_t i = 0; i < p.value.numel(); ++i)
      p.value.data[static_cast<size_t>(i)] = static_cast<T>(it->second.data[static_cast<size_t>(i)]);
  }
  return model;
}

// ---------------------------------------------------------------------------
// evaluation helpers
// ---------------------------------------------------------------------------

/// Mean reconstruction PSNR (dB, encode->quantize->decode) over whole clips.
template <class T>
double reconstruction_psnr(const OaaeModel<T>& model, const synthdata::Dataset& dataset,
                           const std::vector<int>& clip_indices) {
  const bool decomposed = model.config().decomposed;
  double psnr_sum = 0;
  int64_t frames_seen = 0;
  for (int ci : clip_indices) {
    synthdata::Clip clip = dataset.clip(ci);
    const int n = static_cast<int>(clip.frames.size());
    std::vector<std::pair<const synthdata::FrameU8*, const synthdata::MaskU8*>> items;
    for (int f = 0; f < n; ++f) items.push_back({&clip.frames[static_cast<size_t>(f)], &clip.masks[static_cast<size_t>(f)]});
    std::vector<Tensor<T>> slot_batches;
    Tensor<T> frames;
    build_slot_batch(items, dataset.manifest().schema, decomposed, slot_batches, frames);

    Tape<T> tape;
    tape.grad_enabled = false;
    auto bound = model.bind(tape);
    auto fwd = oaae_forward(bound, slot_batches, frames);
    const auto& recon = fwd.recon.val();
    const int64_t per_frame = 3LL * clip.frames[0].h * clip.frames[0].w;
    for (int f = 0; f < n; ++f) {
      double se = 0;
      for (int64_t i = 0; i < per_frame; ++i) {
        const double diff = static_cast<double>(recon.data[static_cast<size_t>(f * per_frame + i)]) -
                            static_cast<double>(frames.data[static_cast<size_t>(f * per_frame + i)]);
        se += diff * diff;
      }
      const double mse_v = se / static_cast<double>(per_frame);
      psnr_sum += mse_v <= 0 ? 100.0 : std::min(100.0, 10.0 * std::log10(1.0 / mse_v));
      ++frames_seen;
    }
  }
  return frames_seen ? psnr_sum / static_cast<double>(frames_seen) : 0.0;
}

}  // namespace ocvp::oaae
