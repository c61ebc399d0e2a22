// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ocvp/harness/pipeline.hpp"

using namespace ocvp;
using namespace ocvp::harness;

namespace {

ExperimentConfig tiny_experiment(uint64_t seed) {
  core::KvMap overrides;
  overrides.set_int("data.n_clips", 10);
  overrides.set_int("eval.test_clips", 4);
  overrides.set_int("train.oaae_steps", 20);
  overrides.set_int("train.pred_steps", 6);
  overrides.set_int("oaae.embed_dim", 6);
  overrides.set_int("oaae.codebook_size", 12);
  overrides.set("oaae.conv_hidden_dims", "8;10");
  overrides.set_int("oaae.n_residual_layers", 1);
  overrides.set_int("predictor.model_dim", 8);
  overrides.set_int("predictor.n_heads", 2);
  overrides.set_int("predictor.depth", 1);
  overrides.set("eval.temperatures", "0.5;1.0");
  overrides.set_int("seed", static_cast<int64_t>(seed));
  return ExperimentConfig::resolve("bounce2", core::KvMap{}, overrides);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config hash is stable under key reordering and whitespace") {
  auto a = ExperimentConfig::resolve("bounce2", core::parse_kv("train.oaae_steps = 100\nseed=3\n"),
                                     core::KvMap{});
  auto b = ExperimentConfig::resolve("bounce2", core::parse_kv("seed = 3 \n train.oaae_steps=100\n"),
                                     core::KvMap{});
  CHECK(a.hash() == b.hash());
  // numerically identical floats hash identically too
  auto c = ExperimentConfig::resolve("bounce2", core::parse_kv("train.oaae_lr = 0.0010\n"), core::KvMap{});
  auto d = ExperimentConfig::resolve("bounce2", core::parse_kv("train.oaae_lr = 1e-3\n"), core::KvMap{});
  CHECK(c.hash() == d.hash());
  // and a changed value changes the hash
  CHECK(a.hash() != c.hash());
}

TEST_CASE("config validation: unknown keys and bad values are all reported at once") {
  core::KvMap bad;
  bad.set("no.such.key", "1");
  bad.set("bogus.extra", "2");
  bad.set("train.oaae_steps", "abc");
  try {
    ExperimentConfig::resolve("bounce2", bad, core::KvMap{});
    FAIL("expected config error");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("no.such.key") != std::string::npos);
    CHECK(msg.find("train.oaae_steps") != std::string::npos);
  }
  CHECK_THROWS(ExperimentConfig::from_preset("nope"));
}

TEST_CASE("presets mirror the intended slot structures") {
  auto b2 = ExperimentConfig::from_preset("bounce2");
  CHECK(b2.schema.total_slots() == 3);
  CHECK(b2.schema.num_classes() == 2);
  auto b3 = ExperimentConfig::from_preset("bounce3");
  CHECK(b3.schema.total_slots() == 4);
  CHECK(b3.schema.num_classes() == 2);
  auto br = ExperimentConfig::from_preset("bounce-real-ish");
  CHECK(br.schema.total_slots() == 5);
  CHECK(br.schema.num_classes() == 3);
  CHECK(br.clip_spec.height == 64);
  // ten temperature values by default: 0.1..0.9 plus 1.0
  CHECK(b2.temperatures.size() == 10);
  CHECK(b2.temperatures.front() == doctest::Approx(0.1));
  CHECK(b2.temperatures.back() == doctest::Approx(1.0));
}

TEST_CASE("ledger: records persist and gate stage skipping") {
  const std::string dir = "/tmp/ocvp_test_ledger";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  {
    RunLedger ledger(dir + "/ledger.json");
    CHECK_FALSE(ledger.has_completed("train", "h1"));
    ledger.record({"train", "done", "h1", "", 1.5, 42});
  }
  {
    RunLedger reloaded(dir + "/ledger.json");
    CHECK(reloaded.has_completed("train", "h1"));
    CHECK_FALSE(reloaded.has_completed("train", "h2"));
    CHECK(reloaded.records().size() == 1);
    // a record pointing at a missing artifact does not count as completed
    reloaded.record({"gen", "done", "h3", dir + "/missing.bin", 0.1, 0});
    CHECK_FALSE(reloaded.has_completed("gen", "h3"));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline stages: generate, train, predict, resume skip") {
  const std::string out = "/tmp/ocvp_test_pipeline";
  std::filesystem::remove_all(out);
  auto cfg = tiny_experiment(3);
  Pipeline p(cfg, out);
  p.generate();
  CHECK(std::filesystem::exists(out + "/dataset/manifest"));
  p.train_autoencoder(true);
  p.train_autoencoder(false);
  CHECK(std::filesystem::exists(out + "/oaae.ckpt"));
  CHECK(std::filesystem::exists(out + "/sis_ae.ckpt"));
  p.train_pred(predictor::Variant::SCAT);
  CHECK(std::filesystem::exists(out + "/pred_scat.ckpt"));

  // the loaded model refuses a stale hash unless forced
  auto model = p.load_predictor(predictor::Variant::SCAT);
  CHECK(model.count_parameters() > 0);

  // prediction files are deterministic in argmax mode
  predictor::SamplerConfig sc;
  sc.horizon = 2;
  sc.argmax = true;
  p.predict(predictor::Variant::SCAT, {6, 7}, sc);
  const std::string c6 = out + "/pred_scat/clip_000006.ocv";
  REQUIRE(std::filesystem::exists(c6));
  const auto first = core::sha256_file_hex(c6);
  p.predict(predictor::Variant::SCAT, {6, 7}, sc);
  CHECK(core::sha256_file_hex(c6) == first);

  // resume: a fresh pipeline over the same directory skips completed stages
  Pipeline resumed(cfg, out);
  const auto mtime = std::filesystem::last_write_time(out + "/oaae.ckpt");
  resumed.generate();
  resumed.train_autoencoder(true);
  CHECK(std::filesystem::last_write_time(out + "/oaae.ckpt") == mtime);

  std::filesystem::remove_all(out);
}

TEST_CASE("compare: report rows cover variants x metrics and resume is equivalent") {
  const std::string out_a = "/tmp/ocvp_test_cmp_a";
  const std::string out_b = "/tmp/ocvp_test_cmp_b";
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
  auto cfg = tiny_experiment(4);

  Pipeline a(cfg, out_a);
  auto result = a.compare();
  REQUIRE(result.variants.size() == 3);
  CHECK(result.variants[0].variant == "sis");
  CHECK(result.variants[1].variant == "sncat");
  CHECK(result.variants[2].variant == "scat");

  const std::string csv = slurp(out_a + "/report.csv");
  for (const char* v : {"sis", "sncat", "scat"}) {
    CHECK(csv.find(std::string(v) + ",full,psnr") != std::string::npos);
    CHECK(csv.find(std::string(v) + ",full,ssim") != std::string::npos);
    CHECK(csv.find(std::string(v) + ",all,num_params") != std::string::npos);
  }
  CHECK(std::filesystem::exists(out_a + "/report.md"));
  CHECK(std::filesystem::exists(out_a + "/curves/psnr_full.csv"));
  CHECK(std::filesystem::exists(out_a + "/curves/psnr_full.svg"));
  CHECK(std::filesystem::exists(out_a + "/ledger.json"));

  // interrupted-then-resumed run: prefix stages done individually, then compare
  Pipeline b(cfg, out_b);
  b.generate();
  b.train_autoencoder(true);
  Pipeline b2(cfg, out_b);
  b2.compare();
  CHECK(slurp(out_b + "/report.csv") == csv);

  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
}

TEST_CASE("compare determinism: same seed in two fresh directories gives identical report bytes") {
  const std::string out_a = "/tmp/ocvp_test_det_a";
  const std::string out_b = "/tmp/ocvp_test_det_b";
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
  auto cfg = tiny_experiment(7);
  Pipeline(cfg, out_a).compare();
  Pipeline(cfg, out_b).compare();
  CHECK(slurp(out_a + "/report.csv") == slurp(out_b + "/report.csv"));
  CHECK(slurp(out_a + "/report.md") == slurp(out_b + "/report.md"));
  std::filesystem::remove_all(out_a);
  std::filesystem::remove_all(out_b);
}
