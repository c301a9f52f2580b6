#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "sentinel/linalg.hpp"

namespace sentinel {

// Marchenko-Pastur parameters for aspect ratio gamma = n/d and variance
// sigma2.  Support edges lambda_pm = sigma2 * (1 +- sqrt(gamma))^2; for
// gamma > 1 the law carries a point mass (1 - 1/gamma) at zero.
struct MpParams {
  double gamma = 1.0;
  double sigma2 = 1.0;

  double lambda_minus() const;
  double lambda_plus() const;
  double zero_mass() const;  // (1 - 1/gamma) for gamma > 1, else 0

  static MpParams make(double gamma, double sigma2);
};

std::pair<double, double> mp_support(const MpParams& p);

// Continuous MP density; zero outside [lambda_minus, lambda_plus].
// Integrates to min(1, 1/gamma); the remainder is the point mass at zero.
double mp_density(double lambda, const MpParams& p);

// Full-mixture CDF evaluated by adaptive Simpson quadrature (1e-8 abs tol).
double mp_cdf(double lambda, const MpParams& p);

// Cached monotone 1024-segment interpolant of the CDF, for KS inner loops.
class MpCdf {
 public:
  explicit MpCdf(const MpParams& p);

  double operator()(double lambda) const;
  double quantile(double prob) const;  // bisection on the interpolant
  const MpParams& params() const { return params_; }
  // Raw continuous-part integral before normalization (normalization check).
  double raw_integral() const { return raw_integral_; }

 private:
  MpParams params_;
  std::vector<double> grid_;
  std::vector<double> cum_;  // continuous part, rescaled to min(1, 1/gamma)
  double raw_integral_ = 0.0;
};

// Robust sigma2 estimate: trimmed mean of the spectrum (discard top
// ceil(m*f_max) and bottom 5%) divided by the matching trimmed mean of the
// unit-variance MP law.  gamma is known from shapes, never fitted.
MpParams estimate_mp_params(const Spectrum& spec, Eigen::Index n, Eigen::Index d,
                            double f_max = 0.49);

struct KsResult {
  double statistic = 0.0;
  std::size_t n_eigs = 0;
  double threshold = 0.0;
  bool reject = false;
};

// Two-sided KS statistic of the spectrum against MP(p), evaluated at the
// empirical jump points.
KsResult ks_statistic(const Spectrum& spec, const MpParams& p, double tau_ks);
KsResult ks_statistic(const Spectrum& spec, const MpCdf& cdf, double tau_ks);

// Indices i with lambda_i > lambda_plus + tau_tail * sigma2.
std::vector<std::size_t> tail_anomalies(const Spectrum& spec, const MpParams& p, double tau_tail);

// Classical asymptotic KS threshold fallback.
inline double ks_fallback_threshold(std::size_t m) {
  return m == 0 ? 1.0 : 1.36 / std::sqrt(static_cast<double>(m));
}

}  // namespace sentinel
