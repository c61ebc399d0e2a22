// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ocvp/predictor/train.hpp"

namespace ocvp::predictor {

/// One categorical draw from a logits row at the given temperature;
/// argmax mode breaks ties toward the lowest index.
template <class T>
int64_t sample_index(const T* logits, int64_t k, const SamplerConfig& sampler, Rng& rng) {
  if (sampler.argmax) {
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (logits[j] > logits[best]) best = j;
    return best;
  }
  T mx = logits[0];
  for (int64_t j = 1; j < k; ++j) mx = std::max(mx, logits[j]);
  std::vector<double> weights(static_cast<size_t>(k));
  for (int64_t j = 0; j < k; ++j)
    weights[static_cast<size_t>(j)] =
        std::exp(static_cast<double>(logits[j] - mx) / sampler.temperature);
  return rng.categorical(weights);
}

template <class T>
struct SampleResult {
  std::vector<core::Tensor<T>> conditioning_recon;  // decoded conditioning tokens, [1,3,H,W] each
  std::vector<core::Tensor<T>> predicted;           // decoded predicted frames
  std::vector<std::vector<std::vector<int64_t>>> predicted_tokens;  // [M][N][S]
};

/// Autoregressive rollout: encode the conditioning frames, then repeatedly
/// forward, sample every token position of the next frame independently from
/// softmax(logits/tau), append, and finally decode through the autoencoder.
template <class T>
SampleResult<T> sample_autoregressive(const PredictorModel<T>& model, const oaae::OaaeModel<T>& ae,
                                      const synthdata::SceneSchema& data_schema,
                                      const synthdata::Clip& clip, int conditioning_frames,
                                      const SamplerConfig& sampler) {
  sampler.validate();
  OCVP_CHECK(static_cast<int>(clip.frames.size()) >= conditioning_frames,
             "sample: clip shorter than conditioning length");
  OCVP_CHECK(conditioning_frames + sampler.horizon <= model.config().max_frames(),
             "sample: conditioning + horizon exceeds the model's positional table");
  synthdata::Clip cond;
  cond.frames.assign(clip.frames.begin(), clip.frames.begin() + conditioning_frames);
  cond.masks.assign(clip.masks.begin(), clip.masks.begin() + conditioning_frames);
  ClipTokens tokens = encode_clip_tokens(ae, data_schema, cond, conditioning_frames);

  const int N = model.schema().total_slots();
  const int S = model.grid_cells();
  const int K = model.codebook_size();
  Rng rng(sampler.seed);
  SampleResult<T> out;

  for (int f = 0; f < conditioning_frames; ++f) {
    std::vector<oaae::LatentTokenGrid> grids;
    for (int k = 0; k < N; ++k) {
      oaae::LatentTokenGrid g;
      g.hp = model.hp();
      g.wp = model.wp();
      g.class_id = model.schema().class_of_slot(k);
      g.slot_id = k;
      g.indices.assign(tokens.slot_tokens[static_cast<size_t>(k)].begin() + static_cast<int64_t>(f) * S,
                       tokens.slot_tokens[static_cast<size_t>(k)].begin() + static_cast<int64_t>(f + 1) * S);
      grids.push_back(std::move(g));
    }
    out.conditioning_recon.push_back(oaae::decode_tokens(ae, grids));
  }

  for (int m = 0; m < sampler.horizon; ++m) {
    const int t_cur = tokens.t;
    Tape<T> tape;
    tape.grad_enabled = false;
    auto bound = model.bind(tape);
    auto logits = bound.forward(tokens.slot_tokens, t_cur);
    std::vector<std::vector<int64_t>> frame_tokens(static_cast<size_t>(N));
    std::vector<oaae::LatentTokenGrid> grids;
    for (int k = 0; k < N; ++k) {
      const auto& lv = logits[static_cast<size_t>(k)].val();  // [t,S,K]
      const T* last = lv.ptr() + (static_cast<int64_t>(t_cur - 1) * S) * K;
      oaae::LatentTokenGrid g;
      g.hp = model.hp();
      g.wp = model.wp();
      g.class_id = model.schema().class_of_slot(k);
      g.slot_id = k;
      for (int p = 0; p < S; ++p) g.indices.push_back(sample_index(last + static_cast<int64_t>(p) * K, K, sampler, rng));
      frame_tokens[static_cast<size_t>(k)] = g.indices;
      tokens.slot_tokens[static_cast<size_t>(k)].insert(tokens.slot_tokens[static_cast<size_t>(k)].end(),
                                                        g.indices.begin(), g.indices.end());
      grids.push_back(std::move(g));
    }
    tokens.t += 1;
    out.predicted.push_back(oaae::decode_tokens(ae, grids));
    out.predicted_tokens.push_back(std::move(frame_tokens));
  }
  return out;
}

}  // namespace ocvp::predictor
