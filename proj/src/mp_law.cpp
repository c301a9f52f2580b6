#include "sentinel/mp_law.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_params(const MpParams& p) {
  if (!(p.gamma > 0.0)) fail(ErrorCode::InvalidInput, "gamma must be positive");
  if (p.sigma2 < 0.0) fail(ErrorCode::InvalidInput, "sigma2 must be nonnegative");
}

// Edge-regular parameterization lambda(theta) = l- + (l+ - l-) sin^2(theta).
// The density times dlambda/dtheta is smooth in theta, including the
// gamma = 1 hard edge at zero.
double density_times_jacobian(double theta, const MpParams& p) {
  const double lm = p.lambda_minus();
  const double lp = p.lambda_plus();
  const double w = lp - lm;
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  const double lambda = lm + w * s * s;
  if (lambda <= 0.0) {
    // Only reachable at theta = 0 with lm = 0 (gamma = 1); take the limit.
    return w / (kPi * p.sigma2 * p.gamma);
  }
  return (w * w * s * s * c * c) / (kPi * p.sigma2 * p.gamma * lambda);
}

double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

double adaptive_simpson_rec(const MpParams& p, double a, double b, double fa, double fm, double fb,
                            double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = density_times_jacobian(lm, p);
  const double frm = density_times_jacobian(rm, p);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  const double delta = left + right - whole;
  if (depth <= 0) fail(ErrorCode::NumericalFailure, "MP CDF quadrature did not converge at 1e-8");
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  return adaptive_simpson_rec(p, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(p, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

double integrate_theta(const MpParams& p, double theta_a, double theta_b, double tol) {
  if (theta_b <= theta_a) return 0.0;
  const double fa = density_times_jacobian(theta_a, p);
  const double fb = density_times_jacobian(theta_b, p);
  const double fm = density_times_jacobian(0.5 * (theta_a + theta_b), p);
  const double whole = simpson(theta_a, theta_b, fa, fm, fb);
  return adaptive_simpson_rec(p, theta_a, theta_b, fa, fm, fb, whole, tol, 48);
}

double theta_of_lambda(double lambda, const MpParams& p) {
  const double lm = p.lambda_minus();
  const double lp = p.lambda_plus();
  const double t = std::clamp((lambda - lm) / (lp - lm), 0.0, 1.0);
  return std::asin(std::sqrt(t));
}

}  // namespace

double MpParams::lambda_minus() const {
  const double r = 1.0 - std::sqrt(gamma);
  return sigma2 * r * r;
}

double MpParams::lambda_plus() const {
  const double r = 1.0 + std::sqrt(gamma);
  return sigma2 * r * r;
}

double MpParams::zero_mass() const { return gamma > 1.0 ? 1.0 - 1.0 / gamma : 0.0; }

MpParams MpParams::make(double gamma, double sigma2) {
  MpParams p{gamma, sigma2};
  check_params(p);
  return p;
}

std::pair<double, double> mp_support(const MpParams& p) {
  check_params(p);
  return {p.lambda_minus(), p.lambda_plus()};
}

double mp_density(double lambda, const MpParams& p) {
  check_params(p);
  if (p.sigma2 == 0.0) fail(ErrorCode::DegenerateDistribution, "sigma2 = 0 has no density");
  const double lm = p.lambda_minus();
  const double lp = p.lambda_plus();
  if (lambda <= lm || lambda >= lp) return (lambda == lm || lambda == lp) ? 0.0 : 0.0;
  return std::sqrt((lp - lambda) * (lambda - lm)) / (2.0 * kPi * p.sigma2 * p.gamma * lambda);
}

double mp_cdf(double lambda, const MpParams& p) {
  check_params(p);
  if (p.sigma2 == 0.0) fail(ErrorCode::DegenerateDistribution, "sigma2 = 0 has no CDF");
  const double mass0 = p.zero_mass();
  if (lambda < 0.0) return 0.0;
  if (lambda <= p.lambda_minus()) return mass0;
  if (lambda >= p.lambda_plus()) return 1.0;
  const double cont_total = integrate_theta(p, 0.0, 0.5 * kPi, 1e-10);
  const double cont = integrate_theta(p, 0.0, theta_of_lambda(lambda, p), 1e-9);
  // Rescale the continuous part so the mixture hits exactly 1 at lambda_plus.
  const double target = 1.0 - mass0;
  return mass0 + cont * (target / cont_total);
}

MpCdf::MpCdf(const MpParams& p) : params_(p) {
  check_params(p);
  if (p.sigma2 == 0.0) fail(ErrorCode::DegenerateDistribution, "sigma2 = 0 has no CDF");
  constexpr int kSegments = 1024;
  grid_.resize(kSegments + 1);
  cum_.resize(kSegments + 1);
  const double lm = p.lambda_minus();
  const double lp = p.lambda_plus();
  double acc = 0.0;
  double prev_theta = 0.0;
  grid_[0] = lm;
  cum_[0] = 0.0;
  for (int i = 1; i <= kSegments; ++i) {
    const double theta = 0.5 * kPi * static_cast<double>(i) / kSegments;
    const double fa = density_times_jacobian(prev_theta, p);
    const double fb = density_times_jacobian(theta, p);
    const double fm = density_times_jacobian(0.5 * (prev_theta + theta), p);
    const double coarse = simpson(prev_theta, theta, fa, fm, fb);
    acc += adaptive_simpson_rec(p, prev_theta, theta, fa, fm, fb, coarse, 1e-8 / kSegments, 40);
    const double s = std::sin(theta);
    grid_[static_cast<std::size_t>(i)] = lm + (lp - lm) * s * s;
    cum_[static_cast<std::size_t>(i)] = acc;
    prev_theta = theta;
  }
  raw_integral_ = acc;
  const double target = 1.0 - p.zero_mass();
  const double scale = acc > 0.0 ? target / acc : 0.0;
  for (double& v : cum_) v *= scale;
}

double MpCdf::operator()(double lambda) const {
  const double mass0 = params_.zero_mass();
  if (lambda < 0.0) return 0.0;
  if (lambda <= grid_.front()) return mass0;
  if (lambda >= grid_.back()) return 1.0;
  auto it = std::upper_bound(grid_.begin(), grid_.end(), lambda);
  const std::size_t hi = static_cast<std::size_t>(it - grid_.begin());
  const std::size_t lo = hi - 1;
  const double t = (lambda - grid_[lo]) / (grid_[hi] - grid_[lo]);
  return mass0 + cum_[lo] + t * (cum_[hi] - cum_[lo]);
}

double MpCdf::quantile(double prob) const {
  prob = std::clamp(prob, 0.0, 1.0);
  const double mass0 = params_.zero_mass();
  if (prob <= mass0) return 0.0;
  double lo = grid_.front();
  double hi = grid_.back();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((*this)(mid) < prob)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

MpParams estimate_mp_params(const Spectrum& spec, Eigen::Index n, Eigen::Index d, double f_max) {
  if (spec.size() == 0) fail(ErrorCode::InvalidInput, "empty spectrum");
  if (n < 1 || d < 1) fail(ErrorCode::InvalidInput, "invalid shape");
  const double gamma = static_cast<double>(n) / static_cast<double>(d);

  std::vector<double> sorted = spec.eigenvalues;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.back() <= 0.0) fail(ErrorCode::DegenerateDistribution, "all-zero spectrum");
  // For gamma <= 1 the MP law puts no mass at zero, so exact zeros can only
  // come from rank-deficient contamination (e.g. duplicated adversarial rows);
  // keeping them drags the trimmed-mean fit toward zero and inflates the
  // anomaly set.
  if (gamma <= 1.0) {
    const double tiny = sorted.back() * 1e-10;  // round-off scale of the top eigenvalue
    sorted.erase(sorted.begin(),
                 std::find_if(sorted.begin(), sorted.end(), [&](double v) { return v > tiny; }));
  }
  const std::size_t m = sorted.size();

  const double lo_frac = 0.05;
  std::size_t lo = static_cast<std::size_t>(std::floor(lo_frac * static_cast<double>(m)));
  std::size_t hi = m - static_cast<std::size_t>(std::ceil(f_max * static_cast<double>(m)));
  if (hi <= lo) {  // tiny spectra: keep at least the middle value
    lo = 0;
    hi = m;
  }
  double emp_mean = 0.0;
  for (std::size_t i = lo; i < hi; ++i) emp_mean += sorted[i];
  emp_mean /= static_cast<double>(hi - lo);

  // Matching trimmed mean of the unit-variance MP mixture over the same
  // probability window.
  const MpParams unit = MpParams::make(gamma, 1.0);
  const MpCdf unit_cdf(unit);
  const double p_lo = static_cast<double>(lo) / static_cast<double>(m);
  const double p_hi = static_cast<double>(hi) / static_cast<double>(m);
  const double mass0 = unit.zero_mass();
  double ref_mean = 0.0;
  if (p_hi > mass0) {
    const double q_lo = unit_cdf.quantile(std::max(p_lo, mass0));
    const double q_hi = unit_cdf.quantile(p_hi);
    const double ta = theta_of_lambda(std::max(q_lo, unit.lambda_minus()), unit);
    const double tb = theta_of_lambda(q_hi, unit);
    // Integrate lambda * rho(lambda) over the window in the theta variable.
    double acc = 0.0;
    const int steps = 512;
    for (int i = 0; i < steps; ++i) {
      const double a = ta + (tb - ta) * i / steps;
      const double b = ta + (tb - ta) * (i + 1) / steps;
      auto f = [&](double th) {
        const double lm = unit.lambda_minus();
        const double lp = unit.lambda_plus();
        const double s = std::sin(th);
        const double lambda = lm + (lp - lm) * s * s;
        return lambda * density_times_jacobian(th, unit);
      };
      acc += simpson(a, b, f(a), f(0.5 * (a + b)), f(b));
    }
    ref_mean = acc / (p_hi - p_lo);
  }
  double sigma2;
  if (ref_mean > 1e-12) {
    sigma2 = emp_mean / ref_mean;
  } else {
    // Window landed entirely inside the zero mass; fall back to the full
    // mean, which equals sigma2 for the MP mixture.
    sigma2 = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(m);
  }
  if (!(sigma2 > 0.0)) fail(ErrorCode::DegenerateDistribution, "nonpositive variance estimate");
  return MpParams::make(gamma, sigma2);
}

KsResult ks_statistic(const Spectrum& spec, const MpParams& p, double tau_ks) {
  return ks_statistic(spec, MpCdf(p), tau_ks);
}

KsResult ks_statistic(const Spectrum& spec, const MpCdf& cdf, double tau_ks) {
  if (spec.size() == 0) fail(ErrorCode::InvalidInput, "empty spectrum");
  std::vector<double> sorted = spec.eigenvalues;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  double d_stat = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double f = cdf(sorted[i]);
    const double lower = f - static_cast<double>(i) / static_cast<double>(m);
    const double upper = static_cast<double>(i + 1) / static_cast<double>(m) - f;
    d_stat = std::max({d_stat, lower, upper});
  }
  KsResult r;
  r.statistic = std::clamp(d_stat, 0.0, 1.0);
  r.n_eigs = m;
  r.threshold = tau_ks;
  r.reject = r.statistic > tau_ks;
  return r;
}

std::vector<std::size_t> tail_anomalies(const Spectrum& spec, const MpParams& p, double tau_tail) {
  check_params(p);
  const double cut = p.lambda_plus() + tau_tail * p.sigma2;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (spec[i] > cut) out.push_back(i);
  return out;
}

}  // namespace sentinel
