// SPDX-License-Identifier: Apache-2.0
//
// Frame <-> per-slot masked instances. The segmenter boundary is an interface
// so learned backends could slot in; only the ground-truth backend ships.
#pragma once

#include <memory>
#include <vector>

#include "ocvp/synthdata/synthdata.hpp"

namespace ocvp::decompose {

/// One instance's masked pixels (zero outside mask) with class and slot tags.
struct MaskedInstanceFrame {
  int h = 0, w = 0;
  std::vector<float> pixels;   // h*w*3, [0,1], zero where mask == 0
  std::vector<uint8_t> mask;   // h*w, {0,1}
  int class_id = 0;
  int slot_id = 0;

  bool empty_mask() const;
};

/// Per-slot instance sequences, schema slot order, consistent slot identity
/// over time.
struct DecomposedClip {
  std::vector<std::vector<MaskedInstanceFrame>> slots;  // [N][T]
  int n_frames() const { return slots.empty() ? 0 : static_cast<int>(slots[0].size()); }
};

/// Splits a frame by its panoptic mask into exactly N instances in schema
/// order; absent slots come back all-zero with an empty mask.
std::vector<MaskedInstanceFrame> decompose_frame(const synthdata::FrameU8& frame,
                                                 const synthdata::MaskU8& mask,
                                                 const synthdata::SceneSchema& schema);

/// Elementwise sum of instances; with partition masks this inverts
/// decompose_frame bit-exactly in the 8-bit domain.
std::vector<float> recompose(const std::vector<MaskedInstanceFrame>& instances);

synthdata::FrameU8 quantize_frame(const std::vector<float>& pixels, int h, int w);
std::vector<float> dequantize_frame(const synthdata::FrameU8& frame);

/// Frame -> panoptic mask with persistent slot ids.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual synthdata::MaskU8 segment(const synthdata::FrameU8& frame, int frame_index) = 0;
};

/// Replays the generator's stored ground-truth masks.
class GroundTruthSegmenter : public Segmenter {
 public:
  explicit GroundTruthSegmenter(std::vector<synthdata::MaskU8> masks) : masks_(std::move(masks)) {}
  synthdata::MaskU8 segment(const synthdata::FrameU8&, int frame_index) override;

 private:
  std::vector<synthdata::MaskU8> masks_;
};

/// Assembles per-slot sequences; per-frame masks must carry persistent ids.
DecomposedClip track_slots(const synthdata::Clip& clip, const std::vector<synthdata::MaskU8>& masks,
                           const synthdata::SceneSchema& schema);

DecomposedClip decompose_clip(const synthdata::Clip& clip, const synthdata::SceneSchema& schema,
                              Segmenter& segmenter);

}  // namespace ocvp::decompose
