#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sentinel/experiments.hpp"

using namespace sentinel;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("sentinel_test_exp_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Json tiny_run_config() {
  Json j;
  j["n"] = 12;
  j["rounds"] = 8;
  j["d"] = 16;
  j["f_count"] = 2;
  j["sigma"] = 0.5;
  j["aggregator"] = "sentinel";
  j["attack"] = {{"kind", "sign_flip"}, {"alpha", 8.0}};
  j["detector"] = {{"f_max", 0.3}};
  j["seed"] = 5;
  return j;
}

}  // namespace

TEST_CASE("parallel_for covers every index exactly once") {
  std::vector<std::atomic<int>> hits(257);
  for (auto& h : hits) h = 0;
  parallel_for(257, 8, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  parallel_for(0, 4, [&](int) { CHECK(false); });
}

TEST_CASE("calibration quantile is deterministic and sane") {
  CalibrationResult a = calibrate_tau(32, 128, 200, 7);
  CalibrationResult b = calibrate_tau(32, 128, 200, 7, 0.49, 0, 4);
  CHECK(a.tau_ks == b.tau_ks);  // thread count must not change the result
  CHECK_FALSE(a.fallback);
  CHECK(a.tau_ks == doctest::Approx(1.1 * a.raw_quantile));
  CHECK(a.tau_ks > 0.0);
  CHECK(a.tau_ks < 1.36 / std::sqrt(32.0) * 3.0);

  CalibrationResult few = calibrate_tau(32, 128, 50, 7);
  CHECK(few.fallback);
  CHECK(few.tau_ks == doctest::Approx(1.36 / std::sqrt(32.0)));
}

TEST_CASE("detection trial hits planted attacks and spares honest rounds") {
  TrialConfig t;
  t.n = 48;
  t.d = 128;
  t.f_count = 8;
  t.shift = 20.0;
  t.detector.f_max = 0.3;
  t.seed = 31;
  TrialResult hit = detection_trial(t);
  CHECK(hit.hit);
  CHECK(hit.recall > 0.5);

  t.shift = 0.0;
  t.f_count = 0;
  int false_alarms = 0;
  for (int s = 0; s < 20; ++s) {
    t.seed = 100 + static_cast<std::uint64_t>(s);
    if (detection_trial(t).any_flag) ++false_alarms;
  }
  CHECK(false_alarms <= 2);
}

TEST_CASE("phase sweep is monotone-ish across the transition") {
  PhaseSweepConfig cfg;
  cfg.points = {0.05, 0.45};
  cfg.seeds = 30;
  cfg.threads = 4;
  cfg.seed = 33;
  auto rows = phase_sweep(cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].sigma2f2 == doctest::Approx(0.05));
  CHECK(rows[0].detection_rate > rows[1].detection_rate);
  CHECK(rows[0].detection_rate > 0.9);
  CHECK(rows[0].regime == "Detectable");
  CHECK(rows[1].regime == "Undetectable");
  CHECK(rows[0].fpr <= 0.2);
}

TEST_CASE("attack grid produces one cell per pair") {
  GridConfig cfg;
  cfg.base.n = 12;
  cfg.base.d = 16;
  cfg.base.f_count = 2;
  cfg.base.rounds = 5;
  cfg.base.sigma = 0.5;
  cfg.base.detector.f_max = 0.3;
  cfg.base.seed = 34;
  cfg.attacks = {"sign_flip", "zero"};
  cfg.aggregators = {"sentinel", "fedavg", "krum"};
  cfg.threads = 4;
  auto cells = attack_grid(cfg);
  REQUIRE(cells.size() == 6);
  for (const auto& c : cells) {
    CHECK_FALSE(c.failed);
    CHECK(std::isfinite(c.final_grad_norm2));
  }
  // Deterministic across repeats.
  auto again = attack_grid(cfg);
  for (std::size_t i = 0; i < cells.size(); ++i)
    CHECK(cells[i].final_grad_norm2 == again[i].final_grad_norm2);
}

TEST_CASE("config json round trip preserves every field") {
  Json j = tiny_run_config();
  j["tau_max"] = 3;
  j["dp"] = {{"epsilon", 4.0}, {"clip", 2.0}};
  j["task"] = "logistic";
  ExperimentConfig cfg = experiment_config_from_json(j);
  CHECK(cfg.task == TaskKind::Logistic);
  CHECK(cfg.n == 12);
  CHECK(cfg.attack.kind == AttackKind::SignFlip);
  CHECK(cfg.attack.alpha == 8.0);
  CHECK(cfg.detector.f_max == 0.3);
  CHECK(cfg.tau_max == 3);
  REQUIRE(cfg.dp.has_value());
  CHECK(cfg.dp->epsilon == 4.0);

  Json back = experiment_config_to_json(cfg);
  ExperimentConfig cfg2 = experiment_config_from_json(back);
  CHECK(experiment_config_to_json(cfg2) == back);
}

TEST_CASE("missing required config fields are named in the error") {
  Json j = tiny_run_config();
  j.erase("rounds");
  try {
    experiment_config_from_json(j);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("rounds") != std::string::npos);
  }
  Json empty = Json::object();
  CHECK_THROWS_AS(experiment_config_from_json(empty), Error);
}

TEST_CASE("attack kind none means no byzantine rows") {
  Json j = tiny_run_config();
  j["attack"] = {{"kind", "none"}};
  ExperimentConfig cfg = experiment_config_from_json(j);
  CHECK(cfg.f_count == 0);
}

TEST_CASE("csv writer emits schema line and parsable rows") {
  fs::path dir = fresh_dir("csv");
  fs::path out = dir / "table.csv";
  write_csv(out, "demo-v1", {"a", "b"}, {{"1", "2.5"}, {"3", "4.5"}});
  std::string text = slurp(out);
  CHECK(text.rfind("# schema: demo-v1\n", 0) == 0);
  CHECK(text.find("a,b\n") != std::string::npos);
  CHECK(text.find("1,2.5\n") != std::string::npos);
}

TEST_CASE("cmd_run writes identical bytes on repeat") {
  fs::path d1 = fresh_dir("run1");
  fs::path d2 = fresh_dir("run2");
  Json cfg = tiny_run_config();
  CommandOutputs o1 = cmd_run(cfg, d1, std::nullopt, 2);
  CommandOutputs o2 = cmd_run(cfg, d2, std::nullopt, 2);
  REQUIRE(!o1.files.empty());
  REQUIRE(o1.files.size() == o2.files.size());
  for (std::size_t i = 0; i < o1.files.size(); ++i) {
    CHECK(slurp(d1 / fs::path(o1.files[i]).filename()) ==
          slurp(d2 / fs::path(o2.files[i]).filename()));
  }
  // Seed override changes the trajectory.
  fs::path d3 = fresh_dir("run3");
  CommandOutputs o3 = cmd_run(cfg, d3, 777, 2);
  CHECK(o3.summary["final_grad_norm2"] != o1.summary["final_grad_norm2"]);
}

TEST_CASE("manifest records the config digest") {
  fs::path dir = fresh_dir("manifest");
  Json cfg = tiny_run_config();
  cmd_run(cfg, dir, std::nullopt, 1);
  fs::path manifest = dir / "manifest.json";
  REQUIRE(fs::exists(manifest));
  Json m = Json::parse(slurp(manifest));
  // The manifest stores the normalized config plus its own digest.
  CHECK(m["config_sha256"] == config_digest(m["config"]));
  CHECK(m.contains("outputs"));
  CHECK(m.contains("seed"));
  // The digest is stable under key reordering of the same content.
  Json reordered;
  for (auto it = cfg.rbegin(); it != cfg.rend(); ++it) reordered[it.key()] = it.value();
  CHECK(config_digest(reordered) == config_digest(cfg));
}

TEST_CASE("cmd_calibrate and cmd_ablate produce artifacts") {
  fs::path dir = fresh_dir("calib");
  CommandOutputs c = cmd_calibrate(24, 96, 120, dir, 9, 2);
  CHECK(c.summary.contains("tau_ks"));
  CHECK(c.summary["tau_ks"].get<double>() > 0.0);
  REQUIRE(!c.files.empty());
  CHECK(fs::exists(dir / fs::path(c.files[0]).filename()));

  fs::path adir = fresh_dir("ablate");
  CommandOutputs a = cmd_ablate("period", adir, 10, 2);
  REQUIRE(!a.files.empty());
  std::string text = slurp(adir / fs::path(a.files[0]).filename());
  CHECK(text.find("period") != std::string::npos);
  CHECK_THROWS_AS(cmd_ablate("bogus", adir, 10, 2), Error);
}
