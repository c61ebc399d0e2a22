// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ocvp/core/rng.hpp"
#include "ocvp/metrics/metrics.hpp"

using namespace ocvp;
using namespace ocvp::metrics;

namespace {

Image random_image(int h, int w, uint64_t seed) {
  core::Rng rng(seed);
  Image img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.data.resize(static_cast<size_t>(h) * w * 3);
  for (auto& v : img.data) v = rng.uniform();
  return img;
}

Image constant_image(int h, int w, double v) {
  Image img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.data.assign(static_cast<size_t>(h) * w * 3, v);
  return img;
}

}  // namespace

TEST_CASE("psnr: sentinel, closed form, independent oracle, symmetry, monotonicity") {
  Image x = random_image(16, 16, 3);
  CHECK(psnr(x, x) == 100.0);

  // uniform difference of 0.1 -> MSE 0.01 -> exactly 20 dB
  Image y = x;
  for (auto& v : y.data) v += 0.1;
  CHECK(psnr(x, y) == doctest::Approx(20.0).epsilon(1e-12));

  // independent two-line oracle on a random pair
  Image z = random_image(16, 16, 4);
  double mse = 0;
  for (size_t i = 0; i < x.data.size(); ++i) mse += (x.data[i] - z.data[i]) * (x.data[i] - z.data[i]);
  mse /= static_cast<double>(x.data.size());
  CHECK(psnr(x, z) == doctest::Approx(10.0 * std::log10(1.0 / mse)).epsilon(1e-9));

  CHECK(psnr(x, z) == doctest::Approx(psnr(z, x)));

  // scaling the error field by s > 1 strictly decreases psnr
  Image y2 = x;
  for (size_t i = 0; i < y2.data.size(); ++i) y2.data[i] = x.data[i] + 2.0 * (z.data[i] - x.data[i]);
  CHECK(psnr(x, y2) < psnr(x, z));
}

TEST_CASE("ssim: identity, dissimilarity, constants, symmetry, window guard") {
  Image x = random_image(16, 16, 7);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  Image inv = x;
  for (auto& v : inv.data) v = 1.0 - v;
  CHECK(ssim(x, inv) < 1.0);
  CHECK(ssim(x, inv) == doctest::Approx(ssim(inv, x)).epsilon(1e-12));

  // constant equal images: stability constants prevent 0/0
  Image a = constant_image(16, 16, 0.3);
  Image b = constant_image(16, 16, 0.3);
  CHECK(ssim(a, b) == doctest::Approx(1.0).epsilon(1e-12));

  Image small = constant_image(8, 8, 0.5);
  CHECK_THROWS_WITH_AS(ssim(small, small), doctest::Contains("smaller than window"),
                       std::runtime_error);
}

TEST_CASE("score_clip guards against length mismatch") {
  std::vector<Image> pred = {random_image(16, 16, 1)};
  std::vector<Image> gt = {random_image(16, 16, 2), random_image(16, 16, 3)};
  CHECK_THROWS_WITH_AS(score_clip(0, pred, gt, 5), doctest::Contains("length mismatch"),
                       std::runtime_error);
}

TEST_CASE("aggregate: single clip single temperature reproduces raw scores") {
  ClipScores clip;
  clip.clip_index = 0;
  clip.frames = {{5, 30.0, 0.9}, {6, 28.0, 0.8}};
  auto agg = aggregate_scores({clip}, 10, false);
  CHECK(agg.mean == doctest::Approx(29.0));
  CHECK(agg.stddev == doctest::Approx(0.0));
  CHECK(agg.mean_per_t[0] == doctest::Approx(30.0));
  CHECK(agg.mean_per_t[1] == doctest::Approx(28.0));
}

TEST_CASE("aggregate: ten identical clips have equal subset means and zero std") {
  std::vector<ClipScores> clips;
  for (int i = 0; i < 10; ++i) {
    ClipScores c;
    c.clip_index = i;
    c.frames = {{5, 25.0, 0.75}, {6, 25.0, 0.75}};
    clips.push_back(c);
  }
  auto agg = aggregate_scores(clips, 10, false);
  CHECK(agg.mean == doctest::Approx(25.0));
  CHECK(agg.stddev == doctest::Approx(0.0));
  auto aggs = aggregate_scores(clips, 10, true);
  CHECK(aggs.mean == doctest::Approx(0.75));
  CHECK(aggs.stddev == doctest::Approx(0.0));
}

TEST_CASE("aggregate: 20 clips with score = clip index match the arithmetic oracle") {
  // subsets by clip index mod 10: subset s = {s, s+10} -> mean s+5;
  // overall mean = mean(5..14) = 9.5; population std over the ten means:
  // sqrt(mean((s+5-9.5)^2)) = sqrt(8.25)
  std::vector<ClipScores> clips;
  for (int i = 0; i < 20; ++i) {
    ClipScores c;
    c.clip_index = i;
    c.frames = {{5, static_cast<double>(i), static_cast<double>(i) / 20.0}};
    clips.push_back(c);
  }
  auto agg = aggregate_scores(clips, 10, false);
  CHECK(agg.mean == doctest::Approx(9.5).epsilon(1e-12));
  CHECK(agg.stddev == doctest::Approx(std::sqrt(8.25)).epsilon(1e-12));
}

TEST_CASE("aggregation identity: mean of subset means equals global mean for equal-size subsets") {
  core::Rng rng(9);
  std::vector<ClipScores> clips;
  double global = 0;
  for (int i = 0; i < 30; ++i) {
    ClipScores c;
    c.clip_index = i;
    const double v = rng.uniform(10, 40);
    c.frames = {{5, v, v / 50.0}};
    global += v;
    clips.push_back(c);
  }
  global /= 30.0;
  auto agg = aggregate_scores(clips, 10, false);
  CHECK(agg.mean == doctest::Approx(global).epsilon(1e-12));
}

TEST_CASE("evaluate: best temperature maximizes each metric independently") {
  std::map<double, std::vector<ClipScores>> by_temp;
  for (double temp : {0.2, 0.5, 0.8}) {
    std::vector<ClipScores> clips;
    ClipScores c;
    c.clip_index = 0;
    // psnr peaks at 0.5, ssim peaks at 0.8
    const double p = temp == 0.5 ? 30.0 : 25.0;
    const double s = temp == 0.8 ? 0.9 : 0.7;
    c.frames = {{5, p, s}};
    clips.push_back(c);
    by_temp[temp] = clips;
  }
  auto report = evaluate(by_temp, 10);
  CHECK(report.best_temperature_psnr == doctest::Approx(0.5));
  CHECK(report.best_temperature_ssim == doctest::Approx(0.8));
  CHECK(report.per_temperature.size() == 3);
}

TEST_CASE("collision subset: no pairs, pinned pair, and threshold monotonicity") {
  using synthdata::SlotCentroid;
  // clip 0: single object -> never selected
  // clip 1: two objects at distance 3.3 px (just above 0.1 * 32)
  // clip 2: two objects at distance 12.8 px (0.4 of 32)
  std::vector<std::vector<SlotCentroid>> cents(3);
  cents[0] = {{0, 1, 10, 10}};
  cents[1] = {{0, 1, 10, 10}, {0, 2, 13.3, 10}};
  cents[2] = {{0, 1, 10, 10}, {0, 2, 22.8, 10}};
  auto sel_small = collision_subset(cents, 32, 0.1);   // threshold 3.2 (strict <)
  auto sel_mid = collision_subset(cents, 32, 0.25);    // threshold 8
  auto sel_big = collision_subset(cents, 32, 0.5);     // threshold 16
  CHECK(sel_small.empty());  // 3.3 is not < 3.2
  CHECK(sel_mid == std::vector<int>{1});
  CHECK(sel_big == std::vector<int>{1, 2});
  // monotonic superset
  for (int c : sel_small) CHECK(std::find(sel_mid.begin(), sel_mid.end(), c) != sel_mid.end());
  for (int c : sel_mid) CHECK(std::find(sel_big.begin(), sel_big.end(), c) != sel_big.end());
}

TEST_CASE("collision subset over a generated dataset uses the centroid sidecar") {
  const std::string dir = "/tmp/ocvp_test_metrics_ds";
  std::filesystem::remove_all(dir);
  synthdata::SceneSchema s;
  s.classes = {"background", "ball"};
  s.slots_per_class = {1, 2};
  synthdata::PhysicsParams phys;
  synthdata::ClipSpec spec;
  synthdata::generate_dataset("m", s, phys, spec, 6, 5, dir);
  synthdata::Dataset ds(dir);
  // collision-aimed clips pass within a ball diameter, well under 25% of 32px
  auto sel = collision_subset(ds, 0.25);
  CHECK(!sel.empty());
  // missing sidecar raises
  std::filesystem::remove(dir + "/centroids.csv");
  CHECK_THROWS_WITH_AS(collision_subset(ds, 0.25), doctest::Contains("centroid sidecar"),
                       std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("csv and svg emitters produce well-formed files") {
  std::map<double, std::vector<ClipScores>> by_temp;
  ClipScores c;
  c.clip_index = 0;
  c.frames = {{5, 30.0, 0.9}, {6, 29.0, 0.88}};
  by_temp[0.5] = {c};
  auto report = evaluate(by_temp, 10);
  const std::string scores = "/tmp/ocvp_scores.csv";
  const std::string summary = "/tmp/ocvp_summary.csv";
  const std::string svg = "/tmp/ocvp_curve.svg";
  write_scores_csv(report, scores);
  write_summary_csv(report, summary);
  write_curves_svg(svg, "psnr", 5,
                   {{"a", "#007700", {30.0, 29.0}, {0.5, 0.4}}, {"b", "#000077", {28.0, 27.5}, {0.3, 0.2}}});
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
  };
  CHECK(slurp(scores).find("0.5000,0,5,30.000000,0.900000") != std::string::npos);
  CHECK(slurp(summary).find("psnr_mean") != std::string::npos);
  const std::string svg_text = slurp(svg);
  CHECK(svg_text.rfind("<svg", 0) == 0);
  CHECK(svg_text.find("</svg>") != std::string::npos);
  CHECK(svg_text.find("polyline") != std::string::npos);
  for (const auto& p : {scores, summary, svg}) std::filesystem::remove(p);
}
