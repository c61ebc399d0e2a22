// SPDX-License-Identifier: Apache-2.0
#include "ocvp/decompose/decompose.hpp"

#include <cmath>

#include "ocvp/core/tensor.hpp"

namespace ocvp::decompose {

using synthdata::Clip;
using synthdata::FrameU8;
using synthdata::MaskU8;
using synthdata::SceneSchema;

bool MaskedInstanceFrame::empty_mask() const {
  for (uint8_t m : mask)
    if (m) return false;
  return true;
}

std::vector<float> dequantize_frame(const FrameU8& frame) {
  std::vector<float> out(frame.rgb.size());
  for (size_t i = 0; i < frame.rgb.size(); ++i) out[i] = static_cast<float>(frame.rgb[i]) / 255.0f;
  return out;
}

FrameU8 quantize_frame(const std::vector<float>& pixels, int h, int w) {
  OCVP_CHECK(static_cast<int>(pixels.size()) == h * w * 3, "quantize_frame: size mismatch");
  FrameU8 out;
  out.h = h;
  out.w = w;
  out.rgb.resize(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) {
    const float v = std::min(1.0f, std::max(0.0f, pixels[i]));
    out.rgb[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

std::vector<MaskedInstanceFrame> decompose_frame(const FrameU8& frame, const MaskU8& mask,
                                                 const SceneSchema& schema) {
  OCVP_CHECK(frame.h == mask.h && frame.w == mask.w, "decompose_frame: frame/mask shape mismatch");
  const int n_slots = schema.total_slots();
  const int hw = frame.h * frame.w;
  for (int p = 0; p < hw; ++p)
    OCVP_CHECK(mask.ids[static_cast<size_t>(p)] < n_slots,
               "decompose_frame: schema mismatch, slot id " << int(mask.ids[static_cast<size_t>(p)])
                                                            << " >= N=" << n_slots);

  std::vector<MaskedInstanceFrame> out(static_cast<size_t>(n_slots));
  for (int k = 0; k < n_slots; ++k) {
    auto& inst = out[static_cast<size_t>(k)];
    inst.h = frame.h;
    inst.w = frame.w;
    inst.class_id = schema.class_of_slot(k);
    inst.slot_id = k;
    inst.pixels.assign(static_cast<size_t>(hw) * 3, 0.0f);
    inst.mask.assign(static_cast<size_t>(hw), 0);
  }
  for (int p = 0; p < hw; ++p) {
    const int k = mask.ids[static_cast<size_t>(p)];
    auto& inst = out[static_cast<size_t>(k)];
    inst.mask[static_cast<size_t>(p)] = 1;
    for (int c = 0; c < 3; ++c)
      inst.pixels[static_cast<size_t>(p) * 3 + c] =
          static_cast<float>(frame.rgb[static_cast<size_t>(p) * 3 + c]) / 255.0f;
  }
  return out;
}

std::vector<float> recompose(const std::vector<MaskedInstanceFrame>& instances) {
  OCVP_CHECK(!instances.empty(), "recompose: no instances");
  const int h = instances[0].h, w = instances[0].w;
  for (const auto& inst : instances)
    OCVP_CHECK(inst.h == h && inst.w == w, "recompose: instance shape mismatch ("
                                               << inst.h << "x" << inst.w << " vs " << h << "x" << w << ")");
  std::vector<float> out(static_cast<size_t>(h) * w * 3, 0.0f);
  for (const auto& inst : instances)
    for (size_t i = 0; i < out.size(); ++i) out[i] += inst.pixels[i];
  return out;
}

MaskU8 GroundTruthSegmenter::segment(const FrameU8&, int frame_index) {
  OCVP_CHECK(frame_index >= 0 && frame_index < static_cast<int>(masks_.size()),
             "segmenter: frame index " << frame_index << " out of range");
  return masks_[static_cast<size_t>(frame_index)];
}

DecomposedClip track_slots(const Clip& clip, const std::vector<MaskU8>& masks,
                           const SceneSchema& schema) {
  OCVP_CHECK(clip.frames.size() == masks.size(), "track_slots: frame/mask count mismatch");
  const int n_slots = schema.total_slots();
  DecomposedClip out;
  out.slots.resize(static_cast<size_t>(n_slots));
  for (size_t t = 0; t < clip.frames.size(); ++t) {
    auto instances = decompose_frame(clip.frames[t], masks[t], schema);
    for (int k = 0; k < n_slots; ++k) out.slots[static_cast<size_t>(k)].push_back(std::move(instances[static_cast<size_t>(k)]));
  }
  return out;
}

DecomposedClip decompose_clip(const Clip& clip, const SceneSchema& schema, Segmenter& segmenter) {
  std::vector<MaskU8> masks;
  for (size_t t = 0; t < clip.frames.size(); ++t)
    masks.push_back(segmenter.segment(clip.frames[t], static_cast<int>(t)));
  return track_slots(clip, masks, schema);
}

}  // namespace ocvp::decompose
