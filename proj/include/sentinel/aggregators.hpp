#pragma once

#include <functional>
#include <string>

#include "sentinel/detector.hpp"

namespace sentinel {

// All aggregators map an n x d round matrix to a single d-vector.

Vector fedavg_mean(const GradientMatrix& G);
Vector coordinate_median(const GradientMatrix& G);

// Discards the beta-fraction largest and smallest entries per coordinate
// (count = floor(beta * n) per side) and averages the rest.  beta in [0, 0.5).
Vector trimmed_mean(const GradientMatrix& G, double beta);

// Krum score of client i: sum of squared distances to its n - f - 2 nearest
// other clients.  Requires n >= 2f + 3.
std::vector<double> krum_scores(const GradientMatrix& G, Eigen::Index f);
Vector krum(const GradientMatrix& G, Eigen::Index f);

// Mean of the n - f lowest-scoring clients.
Vector multi_krum(const GradientMatrix& G, Eigen::Index f);

struct GeomMedianOptions {
  double tol = 1e-9;
  int max_iters = 1000;
  double eps = 1e-10;  // Weiszfeld smoothing
};
Vector geometric_median(const GradientMatrix& G, const GeomMedianOptions& opt = {});

// Iterated-Krum selection of n - 2f clients followed by a coordinate-wise
// f-per-side trimmed mean.  Requires n >= 4f + 3.
Vector bulyan(const GradientMatrix& G, Eigen::Index f);

struct SentinelResult {
  Vector aggregate;
  DetectionReport report;
  bool fallback = false;  // empty honest set -> coordinate median
  std::string warning;
};

// Spectral screening, then the plain mean of the surviving original rows.
SentinelResult sentinel_aggregate(const GradientMatrix& G, const DetectorConfig& cfg);

// Uniform dispatch for experiment sweeps.
using Aggregator = std::function<Vector(const GradientMatrix&)>;
Aggregator make_aggregator(const std::string& name, Eigen::Index f, double beta,
                           const DetectorConfig& cfg);
std::vector<std::string> aggregator_names();

}  // namespace sentinel
