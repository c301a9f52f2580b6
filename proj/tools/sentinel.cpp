// Spectral Sentinel experiment CLI.  Links only the public C API.
#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "spectral_sentinel.h"

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 invalid config/usage.
int status_to_exit(ss_status s) {
  if (s == SS_OK) return 0;
  if (s == SS_INVALID_INPUT) return 2;
  return 1;
}

int report(ss_status s, const char* what) {
  if (s == SS_OK) return 0;
  std::fprintf(stderr, "sentinel: %s failed [%s]: %s\n", what, ss_status_name(s),
               ss_last_error());
  return status_to_exit(s);
}

bool read_file(const std::string& path, std::string& out) {
  std::ifstream f(path);
  if (!f) return false;
  std::ostringstream ss;
  ss << f.rdbuf();
  out = ss.str();
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spectral Sentinel: Byzantine-robust aggregation experiments"};
  app.require_subcommand(1);
  app.fallthrough();  // let --config/--out/--seed appear after the subcommand

  std::string config_path;
  std::string out_dir = "out";
  long long seed = -1;
  int threads = 1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "seed override (>= 0)");
  app.add_option("--threads", threads, "worker threads");

  auto* run = app.add_subcommand("run", "single training run");
  auto* sweep = app.add_subcommand("sweep", "phase-transition sweep");
  auto* grid = app.add_subcommand("grid", "attack x aggregator grid");

  std::string ablate_kind = "sketch";
  auto* ablate = app.add_subcommand("ablate", "ablation study");
  ablate->add_option("kind", ablate_kind, "sketch | period | layerwise | thresholds");

  long long cal_n = 512, cal_d = 1024;
  int cal_draws = 500;
  auto* calibrate = app.add_subcommand("calibrate", "Monte-Carlo threshold calibration");
  calibrate->add_option("--n", cal_n, "clients per round");
  calibrate->add_option("--d", cal_d, "gradient dimension");
  calibrate->add_option("--draws", cal_draws, "Monte-Carlo draws");

  CLI11_PARSE(app, argc, argv);

  const uint64_t useed = seed >= 0 ? static_cast<uint64_t>(seed) : 42;

  if (run->parsed() || sweep->parsed() || grid->parsed()) {
    if (config_path.empty()) {
      std::fprintf(stderr, "sentinel: --config is required\n");
      return 2;
    }
    std::string config;
    if (!read_file(config_path, config)) {
      std::fprintf(stderr, "sentinel: cannot read config %s\n", config_path.c_str());
      return 2;
    }
    ss_status s;
    if (run->parsed())
      s = ss_experiment_run(config.c_str(), out_dir.c_str(), seed, threads);
    else if (sweep->parsed())
      s = ss_experiment_sweep(config.c_str(), out_dir.c_str(), seed, threads);
    else
      s = ss_experiment_grid(config.c_str(), out_dir.c_str(), seed, threads);
    return report(s, run->parsed() ? "run" : sweep->parsed() ? "sweep" : "grid");
  }

  if (ablate->parsed()) {
    return report(ss_experiment_ablate(ablate_kind.c_str(), out_dir.c_str(), useed, threads),
                  "ablate");
  }

  if (calibrate->parsed()) {
    if (cal_draws < 100)
      std::fprintf(stderr, "sentinel: draws < 100, using asymptotic fallback threshold\n");
    double tau = 0.0;
    const ss_status s = ss_experiment_calibrate(cal_n, cal_d, cal_draws, out_dir.c_str(), useed,
                                                threads, &tau);
    if (s == SS_OK) std::printf("tau_ks %.10g\n", tau);
    return report(s, "calibrate");
  }

  return 2;
}
