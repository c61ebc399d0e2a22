// SPDX-License-Identifier: Apache-2.0
//
// ocvp: dataset generation, training, sampling and evaluation for the
// object-centric video prediction lab.
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "ocvp/harness/pipeline.hpp"

namespace {

using namespace ocvp;

struct CommonArgs {
  std::string preset = "bounce2";
  std::string config_file;
  std::vector<std::string> sets;
  std::string out_dir = "runs/default";
  int64_t seed = -1;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--preset", args.preset, "dataset/model preset (bounce2|bounce3|bounce-real-ish)");
  cmd->add_option("--config", args.config_file, "key-value config file; flags override file keys");
  cmd->add_option("--set", args.sets, "override a config key, e.g. --set train.oaae_steps=200");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "global seed (overrides config)");
  cmd->add_flag("--force", args.force, "rerun stages and ignore checkpoint hash mismatches");
}

harness::ExperimentConfig resolve_config(const CommonArgs& args, bool preset_given) {
  core::KvMap file_entries;
  if (!args.config_file.empty()) file_entries = core::parse_kv_file(args.config_file);
  // a preset named in the file wins over the default, but not over --preset
  std::string preset = args.preset;
  if (!preset_given && file_entries.has("preset")) preset = *file_entries.get("preset");
  file_entries.erase("preset");
  core::KvMap overrides;
  for (const auto& s : args.sets) {
    const size_t eq = s.find('=');
    if (eq == std::string::npos) throw std::runtime_error("--set expects key=value, got '" + s + "'");
    overrides.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (args.seed >= 0) overrides.set_int("seed", args.seed);
  auto cfg = harness::ExperimentConfig::resolve(preset, file_entries, overrides);
  std::cout << cfg.canonical_text();
  std::cout << "config_hash = " << cfg.hash() << "\n";
  return cfg;
}

std::vector<int> parse_clip_list(const std::string& list, const harness::ExperimentConfig& cfg) {
  if (list.empty()) return harness::test_clip_indices(cfg);
  std::vector<int> out;
  std::istringstream in(list);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stoi(part));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"object-centric video prediction lab"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string variant = "scat";
  std::string clip_list;
  double temperature = 1.0;
  int horizon = -1;
  int64_t sample_seed = 0;
  bool argmax = false;
  bool sis_only = false, decomposed_only = false;

  auto* gen = app.add_subcommand("generate", "generate a seeded dataset with exact instance masks");
  add_common(gen, args);
  auto* toaae = app.add_subcommand("train-oaae", "train the decomposed and single-slot autoencoders");
  add_common(toaae, args);
  toaae->add_flag("--sis-only", sis_only, "train only the non-decomposed twin");
  toaae->add_flag("--decomposed-only", decomposed_only, "train only the decomposed autoencoder");
  auto* tpred = app.add_subcommand("train-predictor", "train one predictor variant");
  add_common(tpred, args);
  tpred->add_option("--variant", variant, "scat|sncat|sis")->required();
  auto* pred = app.add_subcommand("predict", "autoregressively sample clips from a trained variant");
  add_common(pred, args);
  pred->add_option("--variant", variant, "scat|sncat|sis")->required();
  pred->add_option("--temperature", temperature, "softmax temperature in (0,10]");
  pred->add_option("--horizon", horizon, "frames to predict (default: config horizon)");
  pred->add_option("--sample-seed", sample_seed, "sampler seed");
  pred->add_flag("--argmax", argmax, "deterministic argmax decoding");
  pred->add_option("--clips", clip_list, "comma-separated clip indices (default: test clips)");
  auto* eval = app.add_subcommand("evaluate", "temperature-sweep evaluation of trained variants");
  add_common(eval, args);
  auto* comp = app.add_subcommand("compare", "full pipeline: generate, train, sample, evaluate, report");
  add_common(comp, args);

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* active = app.get_subcommands().front();
    const bool preset_given = active->count("--preset") > 0;
    auto cfg = resolve_config(args, preset_given);
    harness::Pipeline pipeline(cfg, args.out_dir, args.force);

    if (gen->parsed()) {
      pipeline.generate();
    } else if (toaae->parsed()) {
      pipeline.generate();
      if (!sis_only) pipeline.train_autoencoder(true);
      if (!decomposed_only) pipeline.train_autoencoder(false);
    } else if (tpred->parsed()) {
      pipeline.generate();
      const auto v = predictor::variant_from_name(variant);
      pipeline.train_autoencoder(v != predictor::Variant::SiS);
      pipeline.train_pred(v);
    } else if (pred->parsed()) {
      predictor::SamplerConfig sc;
      sc.temperature = temperature;
      sc.horizon = horizon >= 0 ? horizon : cfg.pred.horizon;
      sc.seed = static_cast<uint64_t>(sample_seed);
      sc.argmax = argmax;
      sc.validate();
      pipeline.predict(predictor::variant_from_name(variant), parse_clip_list(clip_list, cfg), sc);
    } else if (eval->parsed()) {
      harness::CompareResult result;
      for (auto v : {predictor::Variant::SiS, predictor::Variant::SNCAT, predictor::Variant::SCAT})
        result.variants.push_back(pipeline.evaluate_variant(v));
      harness::write_compare_report(cfg, result, args.out_dir);
      std::cout << "report written to " << args.out_dir << "/report.md\n";
    } else if (comp->parsed()) {
      pipeline.compare();
      std::cout << "report written to " << args.out_dir << "/report.md\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
