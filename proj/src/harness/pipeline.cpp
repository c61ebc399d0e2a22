// SPDX-License-Identifier: Apache-2.0
#include "ocvp/harness/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "ocvp/decompose/decompose.hpp"
#include "ocvp/predictor/train.hpp"

namespace fs = std::filesystem;

namespace ocvp::harness {

using json = nlohmann::json;
using predictor::Variant;

namespace {

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

uint64_t stage_seed(uint64_t base, const std::string& tag) {
  uint64_t h = 1469598103934665603ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return core::Rng::derive_seed(base, h);
}

}  // namespace

RunLedger::RunLedger(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  if (!in) return;
  json j;
  try {
    in >> j;
  } catch (...) {
    return;  // unreadable ledger: treat as empty, records will be rewritten
  }
  for (const auto& r : j) {
    StageRecord rec;
    rec.stage = r.value("stage", "");
    rec.status = r.value("status", "");
    rec.hash = r.value("hash", "");
    rec.artifact = r.value("artifact", "");
    rec.wall_sec = r.value("wall_sec", 0.0);
    rec.params = r.value("params", static_cast<int64_t>(0));
    records_.push_back(std::move(rec));
  }
}

bool RunLedger::has_completed(const std::string& stage, const std::string& hash) const {
  for (const auto& r : records_)
    if (r.stage == stage && r.hash == hash && r.status == "done") {
      if (r.artifact.empty() || fs::exists(r.artifact)) return true;
    }
  return false;
}

void RunLedger::record(StageRecord rec) {
  records_.push_back(std::move(rec));
  save();
}

void RunLedger::save() const {
  json j = json::array();
  for (const auto& r : records_) {
    j.push_back({{"stage", r.stage},
                 {"status", r.status},
                 {"hash", r.hash},
                 {"artifact", r.artifact},
                 {"wall_sec", r.wall_sec},
                 {"params", r.params}});
  }
  std::ofstream out(path_, std::ios::trunc);
  if (!out) throw std::runtime_error("ledger: cannot write " + path_);
  out << j.dump(2) << "\n";
}

Pipeline::Pipeline(ExperimentConfig cfg, std::string out_dir, bool force)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)), force_(force), ledger_(out_dir_ + "/ledger.json") {
  std::error_code ec;
  fs::create_directories(out_dir_, ec);
  if (ec) throw std::runtime_error("pipeline: cannot create " + out_dir_ + ": " + ec.message());
}

void Pipeline::generate() {
  const std::string hash = cfg_.dataset_hash();
  if (!force_ && ledger_.has_completed("generate", hash) && fs::exists(dataset_dir() + "/manifest")) {
    std::cout << "[generate] skipped (artifact up to date)\n";
    return;
  }
  const auto start = std::chrono::steady_clock::now();
  synthdata::generate_dataset(cfg_.preset, cfg_.schema, cfg_.physics, cfg_.clip_spec, cfg_.n_clips,
                              cfg_.seed, dataset_dir());
  std::cout << "[generate] " << cfg_.n_clips << " clips -> " << dataset_dir() << "\n";
  ledger_.record({"generate", "done", hash, dataset_dir() + "/manifest", seconds_since(start), 0});
}

void Pipeline::train_autoencoder(bool decomposed) {
  const std::string stage = decomposed ? "train-oaae" : "train-sis-ae";
  const std::string hash = cfg_.oaae_stage_hash(decomposed);
  const std::string path = oaae_path(decomposed);
  if (!force_ && ledger_.has_completed(stage, hash) && fs::exists(path)) {
    std::cout << "[" << stage << "] skipped (artifact up to date)\n";
    return;
  }
  const auto start = std::chrono::steady_clock::now();
  synthdata::Dataset ds(dataset_dir());
  oaae::OAAEConfig acfg = decomposed ? cfg_.oaae : oaae::sis_config(cfg_.oaae, cfg_.schema);
  oaae::OaaeTrainOptions opt;
  opt.steps = cfg_.oaae_steps;
  opt.batch_size = cfg_.oaae_batch;
  opt.lr = cfg_.oaae_lr;
  opt.warmup_frac = cfg_.oaae_warmup_frac;
  opt.seed = stage_seed(cfg_.seed, stage);
  auto result = oaae::train_oaae<Real>(ds, train_clip_indices(cfg_), acfg, opt);
  const double psnr = oaae::reconstruction_psnr(result.model, ds, test_clip_indices(cfg_));
  std::cout << "[" << stage << "] steps=" << opt.steps << " final_loss="
            << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back())
            << " heldout_psnr=" << psnr << " dB\n";
  core::save_checkpoint(path, oaae::make_oaae_checkpoint(result.model, hash, cfg_.oaae_steps,
                                                         result.loss_curve));
  ledger_.record({stage, "done", hash, path, seconds_since(start), result.model.count_parameters()});
}

oaae::OaaeModel<Real> Pipeline::load_autoencoder(bool decomposed) const {
  const std::string path = oaae_path(decomposed);
  if (!fs::exists(path))
    throw std::runtime_error("pipeline: missing autoencoder checkpoint " + path +
                             " (run train-oaae first)");
  return oaae::oaae_from_checkpoint<Real>(core::load_checkpoint(path),
                                          cfg_.oaae_stage_hash(decomposed), force_);
}

predictor::PredictorModel<Real> Pipeline::load_predictor(Variant v) const {
  const std::string path = predictor_path(v);
  if (!fs::exists(path))
    throw std::runtime_error("pipeline: missing predictor checkpoint " + path +
                             " (run train-predictor first)");
  return predictor::predictor_from_checkpoint<Real>(core::load_checkpoint(path),
                                                    cfg_.predictor_stage_hash(v), force_);
}

void Pipeline::train_pred(Variant variant) {
  const std::string stage = "train-pred-" + predictor::variant_name(variant);
  const std::string hash = cfg_.predictor_stage_hash(variant);
  const std::string path = predictor_path(variant);
  if (!force_ && ledger_.has_completed(stage, hash) && fs::exists(path)) {
    std::cout << "[" << stage << "] skipped (artifact up to date)\n";
    return;
  }
  const auto start = std::chrono::steady_clock::now();
  synthdata::Dataset ds(dataset_dir());
  auto ae = load_autoencoder(variant != Variant::SiS);
  predictor::PredictorConfig pcfg = cfg_.pred;
  pcfg.variant = variant;
  predictor::PredictorTrainOptions opt;
  opt.steps = cfg_.pred_steps;
  opt.lr = cfg_.pred_lr;
  opt.warmup_frac = cfg_.pred_warmup_frac;
  opt.noise_fraction = cfg_.noise_fraction;
  opt.seed = stage_seed(cfg_.seed, stage);
  auto result = predictor::train_predictor(ds, train_clip_indices(cfg_), ae, pcfg, opt);
  std::cout << "[" << stage << "] steps=" << opt.steps << " params=" << result.model.count_parameters()
            << " final_ce=" << (result.loss_curve.empty() ? 0.0 : result.loss_curve.back()) << "\n";
  core::save_checkpoint(path, predictor::make_predictor_checkpoint(
                                  result.model, hash, cfg_.oaae_stage_hash(variant != Variant::SiS),
                                  cfg_.pred_steps, result.loss_curve));
  ledger_.record({stage, "done", hash, path, seconds_since(start), result.model.count_parameters()});
}

void Pipeline::predict(Variant variant, const std::vector<int>& clip_indices,
                       const predictor::SamplerConfig& sampler) {
  synthdata::Dataset ds(dataset_dir());
  auto ae = load_autoencoder(variant != Variant::SiS);
  auto model = load_predictor(variant);
  const std::string dir = out_dir_ + "/pred_" + predictor::variant_name(variant);
  fs::create_directories(dir);
  const int T = cfg_.pred.context_frames;
  for (int ci : clip_indices) {
    auto clip = ds.clip(ci);
    predictor::SamplerConfig sc = sampler;
    sc.seed = core::Rng::derive_seed(sampler.seed, static_cast<uint64_t>(ci));
    auto sampled = predictor::sample_autoregressive(model, ae, ds.manifest().schema, clip, T, sc);
    synthdata::Clip out;
    auto append = [&](const core::Tensor<Real>& nchw) {
      std::vector<float> pix(static_cast<size_t>(3 * clip.frames[0].h * clip.frames[0].w));
      const int h = clip.frames[0].h, w = clip.frames[0].w;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            pix[(static_cast<size_t>(y) * w + x) * 3 + c] =
                static_cast<float>(nchw.data[static_cast<size_t>((c * h + y) * w + x)]);
      out.frames.push_back(decompose::quantize_frame(pix, h, w));
      synthdata::MaskU8 m;
      m.h = h;
      m.w = w;
      m.ids.assign(static_cast<size_t>(h) * w, 0);  // predictions carry no instance ids
      out.masks.push_back(std::move(m));
    };
    for (const auto& f : sampled.conditioning_recon) append(f);
    for (const auto& f : sampled.predicted) append(f);
    synthdata::save_clip(dir + "/" + synthdata::clip_filename(ci), out);
  }
  std::cout << "[predict-" << predictor::variant_name(variant) << "] " << clip_indices.size()
            << " clips -> " << dir << "\n";
}

VariantEval Pipeline::evaluate_variant(Variant variant) {
  synthdata::Dataset ds(dataset_dir());
  auto ae = load_autoencoder(variant != Variant::SiS);
  auto model = load_predictor(variant);
  const int T = cfg_.pred.context_frames;
  const int M = cfg_.pred.horizon;
  const auto test = test_clip_indices(cfg_);

  std::map<double, std::vector<metrics::ClipScores>> by_temp;
  for (size_t ti = 0; ti < cfg_.temperatures.size(); ++ti) by_temp[cfg_.temperatures[ti]] = {};

  for (int ci : test) {
    auto clip = ds.clip(ci);
    std::vector<metrics::Image> gt;
    for (int f = T; f < T + M; ++f) gt.push_back(metrics::image_from_frame(clip.frames[static_cast<size_t>(f)]));
    for (size_t ti = 0; ti < cfg_.temperatures.size(); ++ti) {
      predictor::SamplerConfig sc;
      sc.temperature = cfg_.temperatures[ti];
      sc.horizon = M;
      sc.seed = stage_seed(cfg_.seed, "sample/" + predictor::variant_name(variant) + "/" +
                                          std::to_string(ci) + "/" + std::to_string(ti));
      auto sampled = predictor::sample_autoregressive(model, ae, ds.manifest().schema, clip, T, sc);
      std::vector<metrics::Image> pred;
      for (const auto& f : sampled.predicted)
        pred.push_back(metrics::image_from_nchw(f.data, clip.frames[0].h, clip.frames[0].w));
      by_temp[cfg_.temperatures[ti]].push_back(metrics::score_clip(ci, pred, gt, T));
    }
  }

  VariantEval out;
  out.variant = predictor::variant_name(variant);
  out.params = model.count_parameters();
  out.full = metrics::evaluate(by_temp, cfg_.eval_subsets);

  const auto collision = metrics::collision_subset(ds, cfg_.collision_fraction);
  std::map<double, std::vector<metrics::ClipScores>> coll_by_temp;
  for (const auto& [temp, clips] : by_temp) {
    std::vector<metrics::ClipScores> kept;
    for (const auto& c : clips)
      if (std::find(collision.begin(), collision.end(), c.clip_index) != collision.end())
        kept.push_back(c);
    coll_by_temp[temp] = std::move(kept);
  }
  bool any_collision = false;
  for (const auto& [temp, clips] : coll_by_temp) any_collision = any_collision || !clips.empty();
  out.collision = any_collision ? metrics::evaluate(coll_by_temp, cfg_.eval_subsets) : metrics::EvalReport{};
  std::cout << "[evaluate-" << out.variant << "] psnr=" << out.full.per_temperature.empty()
            << " best_temp=" << out.full.best_temperature_psnr << "\n";
  return out;
}

CompareResult Pipeline::compare() {
  generate();
  train_autoencoder(true);
  train_autoencoder(false);
  for (Variant v : {Variant::SiS, Variant::SNCAT, Variant::SCAT}) train_pred(v);

  CompareResult result;
  for (Variant v : {Variant::SiS, Variant::SNCAT, Variant::SCAT}) {
    const std::string stage = "evaluate-" + predictor::variant_name(v);
    const auto start = std::chrono::steady_clock::now();
    result.variants.push_back(evaluate_variant(v));
    ledger_.record({stage, "done", cfg_.predictor_stage_hash(v), "", seconds_since(start),
                    result.variants.back().params});
  }
  write_compare_report(cfg_, result, out_dir_);
  ledger_.record({"report", "done", cfg_.hash(), out_dir_ + "/report.csv", 0, 0});
  return result;
}

void write_compare_report(const ExperimentConfig& cfg, const CompareResult& result,
                          const std::string& out_dir) {
  fs::create_directories(out_dir + "/curves");
  char buf[256];

  // long-form CSV: one row per variant x subset x metric
  {
    std::ofstream csv(out_dir + "/report.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("report: cannot write " + out_dir + "/report.csv");
    csv << "variant,subset,metric,value,std,best_temperature\n";
    for (const auto& v : result.variants) {
      for (const char* subset : {"full", "collision"}) {
        const metrics::EvalReport& rep = subset == std::string("full") ? v.full : v.collision;
        if (rep.per_temperature.empty()) continue;
        const metrics::TemperatureReport* best_p = nullptr;
        const metrics::TemperatureReport* best_s = nullptr;
        for (const auto& tr : rep.per_temperature) {
          if (tr.temperature == rep.best_temperature_psnr) best_p = &tr;
          if (tr.temperature == rep.best_temperature_ssim) best_s = &tr;
        }
        std::snprintf(buf, sizeof(buf), "%s,%s,psnr,%.6f,%.6f,%.4f\n", v.variant.c_str(), subset,
                      best_p->psnr.mean, best_p->psnr.stddev, rep.best_temperature_psnr);
        csv << buf;
        std::snprintf(buf, sizeof(buf), "%s,%s,ssim,%.6f,%.6f,%.4f\n", v.variant.c_str(), subset,
                      best_s->ssim.mean, best_s->ssim.stddev, rep.best_temperature_ssim);
        csv << buf;
      }
      std::snprintf(buf, sizeof(buf), "%s,all,num_params,%lld,,\n", v.variant.c_str(),
                    static_cast<long long>(v.params));
      csv << buf;
    }
  }

  // Markdown table per subset
  {
    std::ofstream md(out_dir + "/report.md", std::ios::trunc);
    if (!md) throw std::runtime_error("report: cannot write " + out_dir + "/report.md");
    md << "# Controlled comparison (" << cfg.preset << ")\n\n";
    md << "Config hash: `" << cfg.hash() << "`, seed " << cfg.seed << ", "
       << cfg.eval_test_clips << " test clips, best-of-" << cfg.temperatures.size()
       << " temperature sweep.\n\n";
    for (const char* subset : {"full", "collision"}) {
      md << "## " << (subset == std::string("full") ? "Full test set" : "Collision subset") << "\n\n";
      md << "| Model | PSNR | SSIM | Num-Prms |\n|---|---|---|---|\n";
      for (const auto& v : result.variants) {
        const metrics::EvalReport& rep = subset == std::string("full") ? v.full : v.collision;
        if (rep.per_temperature.empty()) {
          md << "| " << v.variant << " | - | - | " << v.params << " |\n";
          continue;
        }
        const metrics::TemperatureReport* best_p = nullptr;
        const metrics::TemperatureReport* best_s = nullptr;
        for (const auto& tr : rep.per_temperature) {
          if (tr.temperature == rep.best_temperature_psnr) best_p = &tr;
          if (tr.temperature == rep.best_temperature_ssim) best_s = &tr;
        }
        std::snprintf(buf, sizeof(buf),
                      "| %s | %.2f +- %.2f (t=%.1f) | %.3f +- %.3f (t=%.1f) | %lld |\n",
                      v.variant.c_str(), best_p->psnr.mean, best_p->psnr.stddev,
                      rep.best_temperature_psnr, best_s->ssim.mean, best_s->ssim.stddev,
                      rep.best_temperature_ssim, static_cast<long long>(v.params));
        md << buf;
      }
      md << "\n";
    }
  }

  // per-timestep curves at the best temperature of each variant
  const char* colors[] = {"#c0392b", "#2980b9", "#27ae60"};
  for (const char* subset : {"full", "collision"}) {
    for (int metric = 0; metric < 2; ++metric) {
      std::vector<metrics::CurveSeries> series;
      int ci = 0;
      for (const auto& v : result.variants) {
        const metrics::EvalReport& rep = subset == std::string("full") ? v.full : v.collision;
        if (rep.per_temperature.empty()) continue;
        const double best = metric == 0 ? rep.best_temperature_psnr : rep.best_temperature_ssim;
        for (const auto& tr : rep.per_temperature)
          if (tr.temperature == best) {
            const metrics::MetricAggregate& agg = metric == 0 ? tr.psnr : tr.ssim;
            series.push_back({v.variant, colors[ci % 3], agg.mean_per_t, agg.std_per_t});
          }
        ++ci;
      }
      if (series.empty()) continue;
      const std::string name = std::string(metric == 0 ? "psnr" : "ssim") + "_" + subset;
      metrics::write_curves_csv(out_dir + "/curves/" + name + ".csv", cfg.pred.context_frames, series);
      metrics::write_curves_svg(out_dir + "/curves/" + name + ".svg",
                                std::string(metric == 0 ? "PSNR" : "SSIM") + " (" + subset + ")",
                                cfg.pred.context_frames, series);
    }
  }
}

}  // namespace ocvp::harness
