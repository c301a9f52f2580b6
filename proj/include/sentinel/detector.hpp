#pragma once

#include <optional>
#include <string>

#include "sentinel/fd_sketch.hpp"
#include "sentinel/mp_law.hpp"

namespace sentinel {

struct DetectorConfig {
  Eigen::Index sketch_size = 0;   // 0 = full covariance
  double tau_ks = 0.0;            // <= 0 selects the 1.36/sqrt(m) fallback
  double tau_tail = 0.5;          // in multiples of sigma2 beyond lambda_plus
  double f_max = 0.49;            // assumed Byzantine fraction bound, < 0.5
  bool layerwise = false;
  int detection_period = 1;       // rounds between full detections
  int window = 50;                // sliding-window size for online thresholds
  std::vector<Eigen::Index> layer_sketch_sizes;  // optional per-layer override

  void validate() const;
};

enum class PhaseRegime { Detectable, Transition, Undetectable };

const char* phase_regime_name(PhaseRegime r);

struct DetectionReport {
  KsResult ks;
  std::vector<std::size_t> anomalies;      // eigenvalue indices (0 = largest)
  std::vector<Eigen::Index> flagged;       // Byzantine client set B
  std::vector<Eigen::Index> honest;        // complement H
  PhaseRegime regime = PhaseRegime::Detectable;
  double sigma2 = 0.0;                     // fitted bulk variance
  double sigma2_f2 = 0.0;                  // sigma2 * f_max^2
  bool degenerate = false;                 // all-zero input round
  std::vector<DetectionReport> per_layer;
};

struct LayeredGradients {
  std::vector<GradientMatrix> layers;
  std::vector<std::string> names;
};

// Full spectral screening pass over one round of gradients.
DetectionReport detect(const GradientMatrix& G, const DetectorConfig& cfg);

// Scores clients against the anomalous eigendirections (projection energy,
// norm-normalized), flags above the largest score gap, capped at `cap`.
// With no anomalies, falls back to greedy leave-one-out KS improvement.
std::vector<Eigen::Index> identify_byzantine(const Matrix& centered, const Spectrum& spec,
                                             const std::vector<std::size_t>& anomalies,
                                             std::size_t cap, const DetectorConfig& cfg);

DetectionReport detect_layerwise(const LayeredGradients& L, const DetectorConfig& cfg);

// 0.95-quantile of the last `window` accepted-round KS statistics times a
// 1.1 safety factor; calibration fallback below 10 samples.
double update_thresholds(const std::vector<KsResult>& history, int window,
                         double fallback_tau);

PhaseRegime phase_regime(double sigma_hat, double f, double* sigma2_f2_out = nullptr);

}  // namespace sentinel
