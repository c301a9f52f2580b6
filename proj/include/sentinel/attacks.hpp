#pragma once

#include <optional>
#include <string>

#include "sentinel/detector.hpp"
#include "sentinel/rng.hpp"

namespace sentinel {

enum class AttackKind {
  SignFlip,
  ALIE,
  IPM,
  MinMax,
  FallOfEmpires,
  LabelFlipSurrogate,
  ZeroGradient,
  GaussianNoise,
  ModelPoisonSurrogate,
  BackdoorSurrogate,
  AdaptiveSpectral,
  NashAdversary,
};

AttackKind attack_kind_from_name(const std::string& name);
const char* attack_kind_name(AttackKind kind);
std::vector<std::string> attack_names();

struct AttackSpec {
  AttackKind kind = AttackKind::SignFlip;
  double alpha = 1.0;    // sign-flip scale
  double z = -1.0;       // ALIE offset; < 0 selects the classical default
  double epsilon = 0.5;  // IPM / Fall-of-Empires scale
  double lambda = 1.0;   // Nash detection-cost weight
  double sigma_a = 1.0;  // Gaussian-noise attack std
  double drift = 0.1;    // model-poison per-round drift
  std::vector<Eigen::Index> mask;  // backdoor coordinates
  std::vector<double> target;      // backdoor values (paired with mask)

  void validate() const;
};

// honest-stats attacks may only look at mu/s/honest rows; detector-aware
// attacks (AdaptiveSpectral, Nash) additionally get the live config.
struct AttackContext {
  Matrix honest;          // rows visible to the attacker
  Eigen::Index f_count = 1;
  int round = 0;
  std::uint64_t seed = 0;
  std::optional<DetectorConfig> detector;

  Vector honest_mean() const;
  Vector honest_std() const;
};

double alie_default_z(Eigen::Index n, Eigen::Index f);

// Inverse standard-normal CDF (Acklam's rational approximation, ~1e-9 abs).
double inverse_normal_cdf(double p);

// Returns the f_count x d Byzantine block.  Pure in (spec, ctx).
Matrix generate_attack(const AttackSpec& spec, const AttackContext& ctx);

}  // namespace sentinel
