// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "ocvp/synthdata/synthdata.hpp"

namespace ocvp::metrics {

/// Channels-last image in [0,1] doubles.
struct Image {
  int h = 0, w = 0, c = 3;
  std::vector<double> data;  // h*w*c
};

Image image_from_frame(const synthdata::FrameU8& frame);

/// From an NCHW tensor slice ([1,3,H,W] flattened), as produced by the decoder.
Image image_from_nchw(const std::vector<float>& data, int h, int w);
Image image_from_nchw(const std::vector<double>& data, int h, int w);

/// 10*log10(max^2 / MSE) over all pixels and channels; identical frames hit
/// the 100 dB cap used for aggregation.
double psnr(const Image& x, const Image& y, double max_value = 1.0);

/// Mean local SSIM with a Gaussian window (valid positions only).
double ssim(const Image& x, const Image& y, int window = 11, double sigma = 1.5, double k1 = 0.01,
            double k2 = 0.03);

struct FrameScore {
  int time = 0;
  double psnr = 0;
  double ssim = 0;
};

struct ClipScores {
  int clip_index = 0;
  std::vector<FrameScore> frames;
};

struct MetricAggregate {
  double mean = 0, stddev = 0;                  // over subset means
  std::vector<double> mean_per_t, std_per_t;    // per-timestep curves over subsets
};

struct TemperatureReport {
  double temperature = 0;
  std::vector<ClipScores> clips;
  MetricAggregate psnr;
  MetricAggregate ssim;
};

struct EvalReport {
  std::vector<TemperatureReport> per_temperature;
  double best_temperature_psnr = 0;
  double best_temperature_ssim = 0;
  int n_subsets = 10;
};

/// Per-frame scores for one predicted clip against its ground truth.
ClipScores score_clip(int clip_index, const std::vector<Image>& predicted,
                      const std::vector<Image>& ground_truth, int first_time_index);

/// The appendix aggregation: clips are split into `n_subsets` deterministic
/// subsets (clip index mod n), each metric is averaged per subset, and the
/// overall mean/std are computed over the subset means (population std).
MetricAggregate aggregate_scores(const std::vector<ClipScores>& clips, int n_subsets, bool use_ssim);

/// Full protocol over a temperature sweep; best temperature maximizes the
/// per-dataset aggregate, independently per metric.
EvalReport evaluate(const std::map<double, std::vector<ClipScores>>& scores_by_temperature,
                    int n_subsets = 10);

/// Clips whose minimum pairwise centroid distance (over the whole clip) is
/// below `proximity_fraction` of the image width.
std::vector<int> collision_subset(const std::vector<std::vector<synthdata::SlotCentroid>>& centroids,
                                  int image_size, double proximity_fraction = 0.25);
std::vector<int> collision_subset(const synthdata::Dataset& dataset, double proximity_fraction = 0.25);

// ---------------------------------------------------------------------------
// emission
// ---------------------------------------------------------------------------

/// One row per clip x timestep x temperature.
void write_scores_csv(const EvalReport& report, const std::string& path);

/// One row per temperature with subset mean/std per metric.
void write_summary_csv(const EvalReport& report, const std::string& path);

struct CurveSeries {
  std::string label;
  std::string color;  // css color
  std::vector<double> mean;
  std::vector<double> stddev;
};

/// Per-timestep mean curves with shaded +-std bands.
void write_curves_svg(const std::string& path, const std::string& title, int first_time_index,
                      const std::vector<CurveSeries>& series);

void write_curves_csv(const std::string& path, int first_time_index,
                      const std::vector<CurveSeries>& series);

}  // namespace ocvp::metrics
