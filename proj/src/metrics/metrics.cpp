// SPDX-License-Identifier: Apache-2.0
#include "ocvp/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "ocvp/core/tensor.hpp"

namespace ocvp::metrics {

Image image_from_frame(const synthdata::FrameU8& frame) {
  Image img;
  img.h = frame.h;
  img.w = frame.w;
  img.c = 3;
  img.data.resize(frame.rgb.size());
  for (size_t i = 0; i < frame.rgb.size(); ++i) img.data[i] = frame.rgb[i] / 255.0;
  return img;
}

namespace {

template <class T>
Image from_nchw_impl(const std::vector<T>& data, int h, int w) {
  OCVP_CHECK(static_cast<int>(data.size()) == 3 * h * w, "image_from_nchw: size mismatch");
  Image img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.data.resize(data.size());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.data[(static_cast<size_t>(y) * w + x) * 3 + c] =
            static_cast<double>(data[static_cast<size_t>((c * h + y) * w + x)]);
  return img;
}

}  // namespace

Image image_from_nchw(const std::vector<float>& data, int h, int w) { return from_nchw_impl(data, h, w); }
Image image_from_nchw(const std::vector<double>& data, int h, int w) { return from_nchw_impl(data, h, w); }

double psnr(const Image& x, const Image& y, double max_value) {
  OCVP_CHECK(x.h == y.h && x.w == y.w && x.c == y.c && x.data.size() == y.data.size(),
             "psnr: shape mismatch");
  double se = 0;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double d = x.data[i] - y.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(x.data.size());
  if (mse <= 0) return 100.0;  // identical frames: capped sentinel
  return std::min(100.0, 10.0 * std::log10(max_value * max_value / mse));
}

double ssim(const Image& x, const Image& y, int window, double sigma, double k1, double k2) {
  OCVP_CHECK(x.h == y.h && x.w == y.w && x.c == y.c, "ssim: shape mismatch");
  OCVP_CHECK(x.h >= window && x.w >= window,
             "ssim: frame " << x.h << "x" << x.w << " smaller than window " << window);
  const int half = window / 2;
  std::vector<double> kernel(static_cast<size_t>(window) * window);
  double ksum = 0;
  for (int dy = 0; dy < window; ++dy)
    for (int dx = 0; dx < window; ++dx) {
      const double ry = dy - half, rx = dx - half;
      const double v = std::exp(-(rx * rx + ry * ry) / (2 * sigma * sigma));
      kernel[static_cast<size_t>(dy) * window + dx] = v;
      ksum += v;
    }
  for (auto& v : kernel) v /= ksum;

  const double c1 = k1 * k1;  // max value is 1
  const double c2 = k2 * k2;
  double total = 0;
  int64_t count = 0;
  for (int ch = 0; ch < x.c; ++ch)
    for (int cy = half; cy < x.h - half; ++cy)
      for (int cx = half; cx < x.w - half; ++cx) {
        double mx = 0, my = 0;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const double kw = kernel[static_cast<size_t>(dy) * window + dx];
            const size_t p = (static_cast<size_t>(cy - half + dy) * x.w + (cx - half + dx)) * x.c + ch;
            mx += kw * x.data[p];
            my += kw * y.data[p];
          }
        double vx = 0, vy = 0, cov = 0;
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const double kw = kernel[static_cast<size_t>(dy) * window + dx];
            const size_t p = (static_cast<size_t>(cy - half + dy) * x.w + (cx - half + dx)) * x.c + ch;
            const double ex = x.data[p] - mx;
            const double ey = y.data[p] - my;
            vx += kw * ex * ex;
            vy += kw * ey * ey;
            cov += kw * ex * ey;
          }
        const double num = (2 * mx * my + c1) * (2 * cov + c2);
        const double den = (mx * mx + my * my + c1) * (vx + vy + c2);
        total += num / den;
        ++count;
      }
  return total / static_cast<double>(count);
}

ClipScores score_clip(int clip_index, const std::vector<Image>& predicted,
                      const std::vector<Image>& ground_truth, int first_time_index) {
  OCVP_CHECK(predicted.size() == ground_truth.size(),
             "score_clip: prediction/ground truth length mismatch (" << predicted.size() << " vs "
                                                                     << ground_truth.size() << ")");
  ClipScores out;
  out.clip_index = clip_index;
  for (size_t t = 0; t < predicted.size(); ++t)
    out.frames.push_back(FrameScore{first_time_index + static_cast<int>(t),
                                    psnr(predicted[t], ground_truth[t]),
                                    ssim(predicted[t], ground_truth[t])});
  return out;
}

MetricAggregate aggregate_scores(const std::vector<ClipScores>& clips, int n_subsets, bool use_ssim) {
  OCVP_CHECK(n_subsets >= 1, "aggregate_scores: need at least one subset");
  MetricAggregate agg;
  if (clips.empty()) return agg;
  const size_t n_t = clips[0].frames.size();
  auto value = [&](const FrameScore& f) { return use_ssim ? f.ssim : f.psnr; };

  // subset means over all (clip, timestep) scores
  std::vector<double> subset_sum(static_cast<size_t>(n_subsets), 0.0);
  std::vector<int64_t> subset_count(static_cast<size_t>(n_subsets), 0);
  for (const auto& clip : clips) {
    const int s = clip.clip_index % n_subsets;
    for (const auto& f : clip.frames) {
      subset_sum[static_cast<size_t>(s)] += value(f);
      subset_count[static_cast<size_t>(s)] += 1;
    }
  }
  std::vector<double> means;
  for (int s = 0; s < n_subsets; ++s)
    if (subset_count[static_cast<size_t>(s)] > 0)
      means.push_back(subset_sum[static_cast<size_t>(s)] / static_cast<double>(subset_count[static_cast<size_t>(s)]));
  double mean = 0;
  for (double m : means) mean += m;
  mean /= static_cast<double>(means.size());
  double var = 0;
  for (double m : means) var += (m - mean) * (m - mean);
  agg.mean = mean;
  agg.stddev = std::sqrt(var / static_cast<double>(means.size()));

  // per-timestep curves with the same subset convention
  agg.mean_per_t.resize(n_t, 0.0);
  agg.std_per_t.resize(n_t, 0.0);
  for (size_t t = 0; t < n_t; ++t) {
    std::vector<double> ssum(static_cast<size_t>(n_subsets), 0.0);
    std::vector<int64_t> scount(static_cast<size_t>(n_subsets), 0);
    for (const auto& clip : clips) {
      if (t >= clip.frames.size()) continue;
      const int s = clip.clip_index % n_subsets;
      ssum[static_cast<size_t>(s)] += value(clip.frames[t]);
      scount[static_cast<size_t>(s)] += 1;
    }
    std::vector<double> tms;
    for (int s = 0; s < n_subsets; ++s)
      if (scount[static_cast<size_t>(s)] > 0) tms.push_back(ssum[static_cast<size_t>(s)] / static_cast<double>(scount[static_cast<size_t>(s)]));
    double tm = 0;
    for (double m : tms) tm += m;
    tm /= static_cast<double>(tms.size());
    double tv = 0;
    for (double m : tms) tv += (m - tm) * (m - tm);
    agg.mean_per_t[t] = tm;
    agg.std_per_t[t] = std::sqrt(tv / static_cast<double>(tms.size()));
  }
  return agg;
}

EvalReport evaluate(const std::map<double, std::vector<ClipScores>>& scores_by_temperature,
                    int n_subsets) {
  OCVP_CHECK(!scores_by_temperature.empty(), "evaluate: no temperatures");
  EvalReport report;
  report.n_subsets = n_subsets;
  double best_psnr = -1e300, best_ssim = -1e300;
  for (const auto& [temp, clips] : scores_by_temperature) {
    TemperatureReport tr;
    tr.temperature = temp;
    tr.clips = clips;
    tr.psnr = aggregate_scores(clips, n_subsets, false);
    tr.ssim = aggregate_scores(clips, n_subsets, true);
    if (tr.psnr.mean > best_psnr) {
      best_psnr = tr.psnr.mean;
      report.best_temperature_psnr = temp;
    }
    if (tr.ssim.mean > best_ssim) {
      best_ssim = tr.ssim.mean;
      report.best_temperature_ssim = temp;
    }
    report.per_temperature.push_back(std::move(tr));
  }
  return report;
}

std::vector<int> collision_subset(const std::vector<std::vector<synthdata::SlotCentroid>>& centroids,
                                  int image_size, double proximity_fraction) {
  std::vector<int> out;
  const double threshold = proximity_fraction * image_size;
  for (size_t clip = 0; clip < centroids.size(); ++clip) {
    // group by frame, then min pairwise distance over the clip
    std::map<int, std::vector<const synthdata::SlotCentroid*>> by_frame;
    for (const auto& c : centroids[clip]) by_frame[c.frame].push_back(&c);
    double min_dist = 1e300;
    bool has_pair = false;
    for (const auto& [frame, items] : by_frame) {
      for (size_t i = 0; i < items.size(); ++i)
        for (size_t j = i + 1; j < items.size(); ++j) {
          has_pair = true;
          const double d = std::hypot(items[i]->cx_px - items[j]->cx_px, items[i]->cy_px - items[j]->cy_px);
          min_dist = std::min(min_dist, d);
        }
    }
    if (has_pair && min_dist < threshold) out.push_back(static_cast<int>(clip));
  }
  return out;
}

std::vector<int> collision_subset(const synthdata::Dataset& dataset, double proximity_fraction) {
  return collision_subset(dataset.load_centroids(), dataset.manifest().clip_spec.width,
                          proximity_fraction);
}

// ---------------------------------------------------------------------------
// emission
// ---------------------------------------------------------------------------

void write_scores_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_scores_csv: cannot write " + path);
  out << "temperature,clip,time,psnr,ssim\n";
  char line[128];
  for (const auto& tr : report.per_temperature)
    for (const auto& clip : tr.clips)
      for (const auto& f : clip.frames) {
        std::snprintf(line, sizeof(line), "%.4f,%d,%d,%.6f,%.6f\n", tr.temperature, clip.clip_index,
                      f.time, f.psnr, f.ssim);
        out << line;
      }
}

void write_summary_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_summary_csv: cannot write " + path);
  out << "temperature,psnr_mean,psnr_std,ssim_mean,ssim_std\n";
  char line[160];
  for (const auto& tr : report.per_temperature) {
    std::snprintf(line, sizeof(line), "%.4f,%.6f,%.6f,%.6f,%.6f\n", tr.temperature, tr.psnr.mean,
                  tr.psnr.stddev, tr.ssim.mean, tr.ssim.stddev);
    out << line;
  }
  std::snprintf(line, sizeof(line), "best,%.4f,,%.4f,\n", report.best_temperature_psnr,
                report.best_temperature_ssim);
  out << line;
}

void write_curves_csv(const std::string& path, int first_time_index,
                      const std::vector<CurveSeries>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_curves_csv: cannot write " + path);
  out << "label,time,mean,std\n";
  char line[160];
  for (const auto& s : series)
    for (size_t t = 0; t < s.mean.size(); ++t) {
      std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f\n", s.label.c_str(),
                    first_time_index + static_cast<int>(t), s.mean[t], s.stddev[t]);
      out << line;
    }
}

void write_curves_svg(const std::string& path, const std::string& title, int first_time_index,
                      const std::vector<CurveSeries>& series) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_curves_svg: cannot write " + path);
  const int width = 720, height = 440;
  const double ml = 70, mr = 30, mt = 50, mb = 50;
  double lo = 1e300, hi = -1e300;
  size_t n_t = 0;
  for (const auto& s : series) {
    n_t = std::max(n_t, s.mean.size());
    for (size_t t = 0; t < s.mean.size(); ++t) {
      lo = std::min(lo, s.mean[t] - s.stddev[t]);
      hi = std::max(hi, s.mean[t] + s.stddev[t]);
    }
  }
  if (n_t == 0 || lo > hi) {
    lo = 0;
    hi = 1;
    n_t = 1;
  }
  const double span = hi - lo > 1e-12 ? hi - lo : 1.0;
  lo -= 0.05 * span;
  hi += 0.05 * span;
  auto sx = [&](double t) {
    return ml + (width - ml - mr) * (n_t > 1 ? t / static_cast<double>(n_t - 1) : 0.5);
  };
  auto sy = [&](double v) { return height - mb - (height - mt - mb) * (v - lo) / (hi - lo); };

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << width / 2 << "\" y=\"26\" text-anchor=\"middle\" font-size=\"16\" "
      << "font-family=\"sans-serif\">" << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr << "\" y2=\""
      << height - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << height - mb
      << "\" stroke=\"black\"/>\n";
  char buf[256];
  for (int g = 0; g <= 4; ++g) {
    const double v = lo + (hi - lo) * g / 4.0;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-size=\"11\" "
                  "font-family=\"sans-serif\">%.3f</text>\n",
                  ml - 6, sy(v) + 4, v);
    out << buf;
  }
  for (size_t t = 0; t < n_t; ++t) {
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-size=\"11\" "
                  "font-family=\"sans-serif\">%d</text>\n",
                  sx(static_cast<double>(t)), height - mb + 18.0, first_time_index + static_cast<int>(t));
    out << buf;
  }
  int li = 0;
  for (const auto& s : series) {
    std::string band = "<path d=\"";
    for (size_t t = 0; t < s.mean.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%c%.2f,%.2f ", t == 0 ? 'M' : 'L', sx(static_cast<double>(t)),
                    sy(s.mean[t] + s.stddev[t]));
      band += buf;
    }
    for (size_t t = s.mean.size(); t-- > 0;) {
      std::snprintf(buf, sizeof(buf), "L%.2f,%.2f ", sx(static_cast<double>(t)), sy(s.mean[t] - s.stddev[t]));
      band += buf;
    }
    band += "Z\" fill=\"" + s.color + "\" fill-opacity=\"0.15\" stroke=\"none\"/>\n";
    out << band;
    std::string line = "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"2\" points=\"";
    for (size_t t = 0; t < s.mean.size(); ++t) {
      std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", sx(static_cast<double>(t)), sy(s.mean[t]));
      line += buf;
    }
    line += "\"/>\n";
    out << line;
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"13\" font-family=\"sans-serif\" "
                  "fill=\"%s\">%s</text>\n",
                  width - mr - 120.0, mt + 18.0 * (li + 1), s.color.c_str(), s.label.c_str());
    out << buf;
    ++li;
  }
  out << "</svg>\n";
}

}  // namespace ocvp::metrics
