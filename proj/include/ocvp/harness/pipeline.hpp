// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ocvp/harness/config.hpp"
#include "ocvp/metrics/metrics.hpp"
#include "ocvp/oaae/train.hpp"
#include "ocvp/predictor/sample.hpp"

namespace ocvp::harness {

/// Training/inference scalar for the pipeline.
using Real = float;

struct StageRecord {
  std::string stage;
  std::string status;
  std::string hash;
  std::string artifact;
  double wall_sec = 0;
  int64_t params = 0;
};

/// Append-only run record (ledger.json). A stage is skipped on resume when a
/// hash-matched completed record and its artifact both exist.
class RunLedger {
 public:
  explicit RunLedger(std::string path);
  bool has_completed(const std::string& stage, const std::string& hash) const;
  void record(StageRecord rec);
  const std::vector<StageRecord>& records() const { return records_; }

 private:
  void save() const;
  std::string path_;
  std::vector<StageRecord> records_;
};

struct VariantEval {
  std::string variant;
  int64_t params = 0;
  metrics::EvalReport full;
  metrics::EvalReport collision;
};

struct CompareResult {
  std::vector<VariantEval> variants;  // sis, sncat, scat order
};

class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, std::string out_dir, bool force = false);

  const ExperimentConfig& config() const { return cfg_; }
  std::string dataset_dir() const { return out_dir_ + "/dataset"; }
  std::string oaae_path(bool decomposed) const {
    return out_dir_ + (decomposed ? "/oaae.ckpt" : "/sis_ae.ckpt");
  }
  std::string predictor_path(predictor::Variant v) const {
    return out_dir_ + "/pred_" + predictor::variant_name(v) + ".ckpt";
  }

  void generate();
  void train_autoencoder(bool decomposed);
  void train_pred(predictor::Variant variant);

  /// Sample the given test clips at one sampler setting and write predicted
  /// clips (decoded conditioning + horizon) under pred_<variant>/.
  void predict(predictor::Variant variant, const std::vector<int>& clip_indices,
               const predictor::SamplerConfig& sampler);

  /// Temperature-sweep evaluation of one trained variant.
  VariantEval evaluate_variant(predictor::Variant variant);

  /// Full controlled comparison; writes report.md, report.csv and curves/.
  CompareResult compare();

  oaae::OaaeModel<Real> load_autoencoder(bool decomposed) const;
  predictor::PredictorModel<Real> load_predictor(predictor::Variant v) const;

 private:
  ExperimentConfig cfg_;
  std::string out_dir_;
  bool force_;
  RunLedger ledger_;
};

void write_compare_report(const ExperimentConfig& cfg, const CompareResult& result,
                          const std::string& out_dir);

}  // namespace ocvp::harness
