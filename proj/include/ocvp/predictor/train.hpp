// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ocvp/core/checkpoint.hpp"
#include "ocvp/oaae/train.hpp"
#include "ocvp/predictor/model.hpp"

namespace ocvp::predictor {

/// Clean (or noisy) token streams for one clip: per slot, t*S indices.
struct ClipTokens {
  int t = 0;
  std::vector<std::vector<int64_t>> slot_tokens;
};

/// Encode a clip through the frozen autoencoder. With `noise_rng`, pixels are
/// perturbed as x <- clamp(x + 0.1 eps) before masking and encoding; masks
/// and targets stay clean.
template <class T>
ClipTokens encode_clip_tokens(const oaae::OaaeModel<T>& ae, const synthdata::SceneSchema& data_schema,
                              const synthdata::Clip& clip, int max_frames, Rng* noise_rng = nullptr,
                              double noise_mag = 0.1) {
  const int t = std::min<int>(static_cast<int>(clip.frames.size()), max_frames);
  OCVP_CHECK(t >= 1, "encode_clip_tokens: empty clip");
  std::vector<std::pair<const synthdata::FrameU8*, const synthdata::MaskU8*>> items;
  for (int f = 0; f < t; ++f)
    items.push_back({&clip.frames[static_cast<size_t>(f)], &clip.masks[static_cast<size_t>(f)]});
  std::vector<core::Tensor<T>> slot_batches;
  core::Tensor<T> frames;
  oaae::build_slot_batch(items, data_schema, ae.config().decomposed, slot_batches, frames, noise_rng,
                         noise_mag);
  auto grids = oaae::encode_sequence_tokens(ae, slot_batches);
  ClipTokens out;
  out.t = t;
  out.slot_tokens.resize(grids.size());
  for (size_t k = 0; k < grids.size(); ++k)
    for (int f = 0; f < t; ++f)
      out.slot_tokens[k].insert(out.slot_tokens[k].end(), grids[k][static_cast<size_t>(f)].indices.begin(),
                                grids[k][static_cast<size_t>(f)].indices.end());
  return out;
}

/// Teacher-forced next-frame objective: logits at times 0..t-2 against target
/// tokens at times 1..t-1, mean over positions, averaged over slots.
template <class Bound, class T = typename Bound::Scalar>
Var<T> next_token_loss(const Bound& bound,
                       const std::vector<std::vector<int64_t>>& input_tokens,
                       const std::vector<std::vector<int64_t>>& target_tokens, int t) {
  const PredictorModel<T>& model = *bound.model;
  OCVP_CHECK(t >= 2, "next_token_loss: need at least two frames of tokens");
  const int S = model.grid_cells();
  const int N = model.schema().total_slots();
  auto logits = bound.forward(input_tokens, t);
  Var<T> total;
  for (int k = 0; k < N; ++k) {
    Var<T> used = reshape(slice_lead(logits[static_cast<size_t>(k)], 0, t - 1),
                          {static_cast<int64_t>(t - 1) * S, model.codebook_size()});
    std::vector<int64_t> targets(target_tokens[static_cast<size_t>(k)].begin() + S,
                                 target_tokens[static_cast<size_t>(k)].begin() + static_cast<int64_t>(t) * S);
    Var<T> ce = cross_entropy_mean(used, targets);
    total = total.valid() ? add(total, ce) : ce;
  }
  return scale(total, T(1) / static_cast<T>(N));
}

struct PredictorTrainOptions {
  int64_t steps = 500;
  double lr = 1e-3;
  double warmup_frac = 0.05;
  double noise_fraction = 0.1;  // pixel-noise magnitude; 0 disables re-encoding
  uint64_t seed = 0;
};

template <class T>
struct PredictorTrainResult {
  PredictorModel<T> model;
  std::vector<double> loss_curve;
};

/// Teacher-forced training against a frozen autoencoder, batch of one clip
/// per step (single-threaded, deterministic).
template <class T>
PredictorTrainResult<T> train_predictor(const synthdata::Dataset& dataset,
                                        const std::vector<int>& clip_indices,
                                        const oaae::OaaeModel<T>& ae, const PredictorConfig& pcfg,
                                        const PredictorTrainOptions& opt) {
  const auto& man = dataset.manifest();
  PredictorTrainResult<T> result{
      build_variant(pcfg.variant, man.schema, ae, pcfg, man.clip_spec.height, man.clip_spec.width,
                    opt.seed),
      {}};
  PredictorModel<T>& model = result.model;
  if (opt.steps == 0) return result;
  OCVP_CHECK(!clip_indices.empty(), "train_predictor: no training clips");

  std::vector<synthdata::Clip> clips;
  std::vector<ClipTokens> clean;
  for (int ci : clip_indices) {
    clips.push_back(dataset.clip(ci));
    clean.push_back(encode_clip_tokens(ae, man.schema, clips.back(), pcfg.max_frames()));
  }

  core::Adam<T> optim(model.params());
  core::LrSchedule sched{opt.lr, static_cast<int64_t>(std::llround(opt.warmup_frac * static_cast<double>(opt.steps))),
                         opt.steps};
  Rng data_rng(Rng::derive_seed(opt.seed, 0x9ced));
  Rng noise_rng(Rng::derive_seed(opt.seed, 0x015e));
  Rng drop_rng(Rng::derive_seed(opt.seed, 0xd409));

  std::vector<size_t> order;
  size_t cursor = 0;
  auto next_clip = [&]() {
    if (cursor >= order.size()) {
      order.resize(clips.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      data_rng.shuffle(order);
      cursor = 0;
    }
    return order[cursor++];
  };

  for (int64_t step = 0; step < opt.steps; ++step) {
    const size_t ci = next_clip();
    const ClipTokens& target = clean[ci];
    ClipTokens noisy;
    const bool use_noise = opt.noise_fraction > 0;
    if (use_noise)
      noisy = encode_clip_tokens(ae, man.schema, clips[ci], pcfg.max_frames(), &noise_rng,
                                 opt.noise_fraction);
    const ClipTokens& input = use_noise ? noisy : target;

    Tape<T> tape;
    auto bound = model.bind(tape, nullptr, model.config().dropout > 0 ? &drop_rng : nullptr);
    Var<T> loss = next_token_loss(bound, input.slot_tokens, target.slot_tokens, target.t);
    const double lv = static_cast<double>(loss.val().data[0]);
    if (!std::isfinite(lv))
      throw std::runtime_error("train_predictor: aborted at step " + std::to_string(step) +
                               ": non-finite cross-entropy " + core::format_double(lv));
    result.loss_curve.push_back(lv);
    model.params().zero_grad();
    tape.backward(loss);
    bound.p.collect_grads();
    optim.step(sched.at(step));
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

template <class T>
core::Checkpoint make_predictor_checkpoint(const PredictorModel<T>& model, const std::string& config_hash,
                                           const std::string& oaae_hash, int64_t step,
                                           const std::vector<double>& loss_curve) {
  core::Checkpoint ck;
  ck.meta.set("kind", "predictor");
  ck.meta.set("config_hash", config_hash);
  ck.meta.set("oaae_config_hash", oaae_hash);
  ck.meta.set("schema", model.schema().to_string());
  ck.meta.set_int("step", step);
  ck.meta.set_int("vq_dim", model.vq_dim());
  ck.meta.set_int("codebook_size", model.codebook_size());
  ck.meta.set_int("hp", model.hp());
  ck.meta.set_int("wp", model.wp());
  model.config().to_kv(ck.meta, "predictor.");
  for (const auto& p : model.params().params()) {
    core::NamedArray arr;
    arr.shape = p.value.shape;
    arr.data.resize(static_cast<size_t>(p.value.numel()));
    for (int64_t i = 0; i < p.value.numel(); ++i) arr.data[static_cast<size_t>(i)] = static_cast<double>(p.value.data[i]);
    ck.arrays.emplace(p.name, std::move(arr));
  }
  for (int c = 0; c < model.schema().num_classes(); ++c) {
    const auto& cb = model.codebooks()[static_cast<size_t>(c)];
    core::NamedArray arr;
    arr.shape = cb.shape;
    arr.data.resize(static_cast<size_t>(cb.numel()));
    for (int64_t i = 0; i < cb.numel(); ++i) arr.data[static_cast<size_t>(i)] = static_cast<double>(cb.data[i]);
    ck.arrays.emplace("codebook." + model.schema().classes[static_cast<size_t>(c)], std::move(arr));
  }
  if (!loss_curve.empty())
    ck.arrays.emplace("loss_curve", core::NamedArray{{static_cast<int64_t>(loss_curve.size())}, loss_curve});
  return ck;
}

template <class T>
PredictorModel<T> predictor_from_checkpoint(const core::Checkpoint& ck, const std::string& expect_hash = "",
                                            bool force = false) {
  OCVP_CHECK(ck.meta.get_string("kind", "") == "predictor", "predictor checkpoint: wrong kind");
  const std::string stored_hash = ck.meta.get_string("config_hash", "");
  if (!expect_hash.empty() && stored_hash != expect_hash && !force)
    throw std::runtime_error("predictor checkpoint: config hash mismatch (stored " + stored_hash +
                             ", expected " + expect_hash + "); pass --force to override");
  std::vector<std::string> errors;
  PredictorConfig cfg = PredictorConfig::from_kv(ck.meta, "predictor.", &errors);
  OCVP_CHECK(errors.empty(), "predictor checkpoint: malformed config metadata");
  auto schema = synthdata::SceneSchema::from_string(ck.meta.get_string("schema", "background:1"));
  const int vq_dim = static_cast<int>(ck.meta.get_int("vq_dim", 0, nullptr));
  const int K = static_cast<int>(ck.meta.get_int("codebook_size", 0, nullptr));
  const int hp = static_cast<int>(ck.meta.get_int("hp", 0, nullptr));
  const int wp = static_cast<int>(ck.meta.get_int("wp", 0, nullptr));
  std::vector<core::Tensor<T>> codebooks;
  for (int c = 0; c < schema.num_classes(); ++c) {
    auto it = ck.arrays.find("codebook." + schema.classes[static_cast<size_t>(c)]);
    OCVP_CHECK(it != ck.arrays.end(), "predictor checkpoint: missing codebook array");
    core::Tensor<T> cb;
    cb.shape = it->second.shape;
    cb.data.resize(it->second.data.size());
    for (size_t i = 0; i < cb.data.size(); ++i) cb.data[i] = static_cast<T>(it->second.data[i]);
    codebooks.push_back(std::move(cb));
  }
  PredictorModel<T> model(cfg, schema, vq_dim, K, hp, wp, std::move(codebooks), 0);
  for (auto& p : model.params().params()) {
    auto it = ck.arrays.find(p.name);
    OCVP_CHECK(it != ck.arrays.end(), "predictor checkpoint: missing array '" << p.name << "'");
    OCVP_CHECK(it->second.shape == p.value.shape, "predictor checkpoint: shape mismatch for '" << p.name << "'");
    for (int64_t i = 0; i < p.value.numel(); ++i)
      p.value.data[static_cast<size_t>(i)] = static_cast<T>(it->second.data[static_cast<size_t>(i)]);
  }
  return model;
}

}  // namespace ocvp::predictor
