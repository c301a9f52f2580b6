#pragma once

#include <deque>
#include <optional>
#include <string>

#include "sentinel/aggregators.hpp"
#include "sentinel/attacks.hpp"
#include "sentinel/ledger.hpp"
#include "sentinel/rng.hpp"

namespace sentinel {

enum class TaskKind { Quadratic, Logistic };

// Synthetic convex task with controlled noise and heterogeneity.
// Quadratic: F_i(w) = 0.5 ||w - w* - delta_i||^2; Logistic: fixed per-client
// dataset of 64 points.  Per-round gradients add xi ~ N(0, sigma^2 I).
class HonestModel {
 public:
  HonestModel(TaskKind task, Eigen::Index d, Eigen::Index n_clients, double sigma,
              double sigma_het, std::uint64_t seed);

  Vector client_gradient(Eigen::Index client, const Vector& w, Rng& noise_rng) const;
  Vector true_gradient(const Vector& w) const;  // population gradient, noiseless
  double loss(const Vector& w) const;

  TaskKind task() const { return task_; }
  Eigen::Index d() const { return d_; }
  Eigen::Index n_clients() const { return n_clients_; }
  double sigma() const { return sigma_; }
  const Vector& w_star() const { return w_star_; }

 private:
  Vector client_mean_gradient(Eigen::Index client, const Vector& w) const;

  TaskKind task_;
  Eigen::Index d_;
  Eigen::Index n_clients_;
  double sigma_;
  Vector w_star_;
  Matrix shifts_;  // n x d, N(0, sigma_het^2)
  // Logistic task data (empty for Quadratic).
  std::vector<Matrix> X_;
  std::vector<Vector> y_;
};

struct DpOptions {
  double epsilon = 8.0;
  double clip = 1.0;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::Quadratic;
  Eigen::Index d = 64;
  Eigen::Index n = 32;
  Eigen::Index f_count = 6;
  int rounds = 50;
  double eta = 0.01;
  double sigma = 1.0;
  double sigma_het = 0.5;
  std::string aggregator = "sentinel";
  double trim_beta = 0.2;  // trimmed-mean parameter
  AttackSpec attack;
  DetectorConfig detector;
  int tau_max = 0;  // async staleness bound; 0 = synchronous
  std::optional<DpOptions> dp;
  std::uint64_t seed = 0;
  bool record_detection = true;
  bool use_ledger = false;
  std::string ledger_dir;
  int ledger_keep_rounds = -1;

  void validate() const;
};

struct RoundMetrics {
  int round = 0;
  double grad_norm2 = 0.0;   // ||grad F(w_t)||^2 at the pre-step iterate
  double agg_error2 = 0.0;   // ||g_hat - mean of honest rows||^2
  double loss = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::vector<Eigen::Index> flagged;  // in shuffled positions
  PhaseRegime regime = PhaseRegime::Detectable;
  double mean_staleness = 0.0;
  bool failed = false;
  bool detection_ran = false;
};

struct RunResult {
  std::vector<RoundMetrics> rounds;
  Vector final_w;
  double final_grad_norm2 = 0.0;
  double min_grad_norm2 = 0.0;
  double mean_recall = 0.0;
  double mean_precision = 0.0;
};

// Clip rows to norm <= clip, then add N(0, sigma_dp^2 I) with
// sigma_dp = clip * sqrt(2 ln(1.25/1e-5)) / epsilon (Gaussian mechanism).
Matrix dp_inject(const Matrix& G, double epsilon, double clip, Rng& rng);

// One full training run; tau_max > 0 delays each client's visible update by
// uniform{0..tau_max} rounds (gradient evaluated at the stale iterate).
RunResult run_experiment(const ExperimentConfig& cfg);

// Assembles one round matrix outside the training loop (used by sweep-style
// callers): honest rows first, Byzantine last, then a seeded shuffle.
// byz_positions receives the shuffled row indices of the Byzantine block;
// client_of_pos (optional) maps each row position to its pre-shuffle client
// id (honest 0..nh-1, Byzantine nh..n-1).
GradientMatrix assemble_round(const Matrix& honest, const Matrix& byz, std::uint64_t seed,
                              int round, std::vector<Eigen::Index>& byz_positions,
                              std::vector<Eigen::Index>* client_of_pos = nullptr);

}  // namespace sentinel
