#pragma once

#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>

#include "sentinel/sim.hpp"

namespace sentinel {

using Json = nlohmann::json;

// ---- parallel helper ------------------------------------------------------

// Runs fn(0..n_items) on a worker pool; results must be written to
// pre-allocated per-index slots so the merge order is deterministic.
void parallel_for(int n_items, int threads, const std::function<void(int)>& fn);

// ---- calibration ----------------------------------------------------------

struct CalibrationResult {
  double tau_ks = 0.0;       // inflated quantile, ready for DetectorConfig
  double raw_quantile = 0.0; // 0.95 quantile of honest KS statistics
  int draws = 0;
  bool fallback = false;     // too few draws -> 1.36/sqrt(n)
};

// Monte-Carlo honest-spectrum calibration: i.i.d. Gaussian rounds, KS
// statistic quantile times a 1.1 safety factor.
CalibrationResult calibrate_tau(Eigen::Index n, Eigen::Index d, int draws, std::uint64_t seed,
                                double f_max = 0.49, Eigen::Index sketch_size = 0,
                                int threads = 1);

// ---- phase sweep ----------------------------------------------------------

struct PhaseSweepConfig {
  Eigen::Index n = 64;
  Eigen::Index d = 256;
  double f = 0.25;                  // Byzantine fraction for the sweep
  std::vector<double> points;       // sigma2 * f^2 grid
  int seeds = 200;
  double shift = 11.5;              // fixed Byzantine mean displacement
  double tau_ks = 0.0;              // 0 = calibrate internally
  std::uint64_t seed = 42;
  int threads = 1;
};

struct SweepRow {
  double sigma2f2 = 0.0;
  double detection_rate = 0.0;
  double fpr = 0.0;
  std::string regime;
};

// Moment-probing adversary sweep: honest rows N(mu0, sigma^2 I) with
// sigma^2 = point / f^2, Byzantine rows mean-shifted by `shift` along a
// random direction.  Larger sigma buries the fixed shift in the bulk.
std::vector<SweepRow> phase_sweep(const PhaseSweepConfig& cfg);

// Single synthetic detection trial shared by sweep/ablations/acceptance.
struct TrialConfig {
  Eigen::Index n = 64;
  Eigen::Index d = 256;
  Eigen::Index f_count = 16;
  double sigma = 1.0;
  double shift = 16.0;       // 0 = honest-only round
  DetectorConfig detector;
  std::uint64_t seed = 0;
  bool gaussian_attack = true;  // moment-probing shift; false = sign-flip style
  double sign_flip_alpha = 10.0;
};

struct TrialResult {
  bool hit = false;        // some true Byzantine row flagged
  bool any_flag = false;   // any row flagged or KS rejected
  double recall = 0.0;
  double precision = 1.0;
};

TrialResult detection_trial(const TrialConfig& cfg);

// ---- attack grid ----------------------------------------------------------

struct GridConfig {
  ExperimentConfig base;
  std::vector<std::string> attacks;      // empty = all
  std::vector<std::string> aggregators;  // empty = all
  int threads = 1;
};

struct GridCell {
  std::string attack;
  std::string aggregator;
  double final_grad_norm2 = 0.0;
  double mean_recall = 0.0;
  double mean_precision = 0.0;
  bool failed = false;
  std::string error;
};

std::vector<GridCell> attack_grid(const GridConfig& cfg);

// ---- ablations ------------------------------------------------------------

struct AblationRow {
  std::string axis;    // "sketch_size" | "period" | "layerwise" | "threshold"
  std::string setting;
  double detection_rate = 0.0;
  double fpr = 0.0;
  double runtime_ms = 0.0;
};

std::vector<AblationRow> ablate_sketch(const std::vector<Eigen::Index>& ks, int seeds,
                                       std::uint64_t seed, int threads);
std::vector<AblationRow> ablate_period(const std::vector<int>& periods, int seeds,
                                       std::uint64_t seed);
std::vector<AblationRow> ablate_layerwise(int seeds, std::uint64_t seed);
std::vector<AblationRow> ablate_thresholds(int seeds, std::uint64_t seed);

// ---- config & file plumbing ----------------------------------------------

ExperimentConfig experiment_config_from_json(const Json& j);
Json experiment_config_to_json(const ExperimentConfig& cfg);

std::string config_digest(const Json& config);  // sha256 of the canonical dump

void write_csv(const std::filesystem::path& path, const std::string& schema,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

void write_manifest(const std::filesystem::path& path, const Json& config, std::uint64_t seed,
                    const std::vector<std::string>& outputs);

// cmd_* backends: run, write artifacts into out_dir, return produced paths.
struct CommandOutputs {
  std::vector<std::string> files;
  Json summary;
};

CommandOutputs cmd_run(const Json& config, const std::filesystem::path& out_dir,
                       std::optional<std::uint64_t> seed_override, int threads);
CommandOutputs cmd_sweep(const Json& config, const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> seed_override, int threads);
CommandOutputs cmd_grid(const Json& config, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed_override, int threads);
CommandOutputs cmd_ablate(const std::string& kind, const std::filesystem::path& out_dir,
                          std::uint64_t seed, int threads);
CommandOutputs cmd_calibrate(Eigen::Index n, Eigen::Index d, int draws,
                             const std::filesystem::path& out_dir, std::uint64_t seed,
                             int threads);

}  // namespace sentinel
