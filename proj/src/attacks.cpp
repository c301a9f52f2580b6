#include "sentinel/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel {

namespace {

// Purpose tags for deriving independent RNG streams per attack.
enum : std::uint64_t {
  kStreamGauss = 0x41,
  kStreamMask = 0x42,
  kStreamPoisonDir = 0x43,
  kStreamAdaptive = 0x44,
  kStreamNash = 0x45,
};

Vector random_unit(Rng& rng, Eigen::Index d) {
  Vector u(d);
  for (Eigen::Index j = 0; j < d; ++j) u(j) = rng.gaussian();
  const double norm = u.norm();
  return norm > 0 ? Vector(u / norm) : Vector(Vector::Unit(d, 0));
}

Matrix replicate_row(const Vector& row, Eigen::Index f) {
  Matrix out(f, row.size());
  out.rowwise() = row.transpose();
  return out;
}

// Attack direction: against the honest mean when it is informative, random
// otherwise (an all-zero mean gives the attacker nothing to negate).
Vector perturbation_direction(const Vector& mu, Rng& rng) {
  const double norm = mu.norm();
  if (norm > 1e-12) return -mu / norm;
  return random_unit(rng, mu.size());
}

double max_honest_pairwise_dist(const Matrix& H) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < H.rows(); ++i)
    for (Eigen::Index j = i + 1; j < H.rows(); ++j)
      best = std::max(best, (H.row(i) - H.row(j)).norm());
  return best;
}

double max_dist_to_honest(const Vector& g, const Matrix& H) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < H.rows(); ++i)
    best = std::max(best, (H.row(i).transpose() - g).norm());
  return best;
}

Matrix min_max_rows(const AttackContext& ctx) {
  const Vector mu = ctx.honest_mean();
  Rng rng(derive_seed(ctx.seed, kStreamGauss, static_cast<std::uint64_t>(ctx.round)));
  const Vector p = perturbation_direction(mu, rng);
  const double budget = max_honest_pairwise_dist(ctx.honest);
  if (budget <= 0.0) return replicate_row(mu, ctx.f_count);  // identical honest rows

  // Largest gamma keeping the crafted row within the honest diameter.
  double lo = 0.0, hi = 1.0;
  while (max_dist_to_honest(mu + hi * p, ctx.honest) <= budget && hi < 1e12) hi *= 2.0;
  while (hi - lo > 1e-6) {
    const double mid = 0.5 * (lo + hi);
    if (max_dist_to_honest(mu + mid * p, ctx.honest) <= budget)
      lo = mid;
    else
      hi = mid;
  }
  return replicate_row(mu + lo * p, ctx.f_count);
}

// Runs the real detector on [honest; byz] and reports whether the attack
// stays unnoticed (no rejection and no Byzantine row flagged).
bool evades_detection(const Matrix& honest, const Matrix& byz, const DetectorConfig& cfg) {
  const Eigen::Index n = honest.rows() + byz.rows();
  GradientMatrix G;
  G.data.resize(n, honest.cols());
  G.data.topRows(honest.rows()) = honest;
  G.data.bottomRows(byz.rows()) = byz;
  DetectionReport r;
  try {
    r = detect(G, cfg);
  } catch (const Error&) {
    return false;
  }
  if (r.ks.reject) return false;
  for (Eigen::Index i : r.flagged)
    if (i >= honest.rows()) return false;
  return true;
}

Matrix adaptive_spectral_rows(const AttackContext& ctx) {
  if (!ctx.detector) fail(ErrorCode::InvalidInput, "adaptive attack requires detector knowledge");
  const Vector mu = ctx.honest_mean();
  Rng rng(derive_seed(ctx.seed, kStreamAdaptive, static_cast<std::uint64_t>(ctx.round)));
  const Vector p = perturbation_direction(mu, rng);
  const Vector s = ctx.honest_std();
  const double scale = std::max(s.norm(), 1e-6);

  // Magnitude search with step halving against the live detector: keep the
  // largest displacement that still evades.
  double step = 8.0 * scale;
  double t = 0.0;
  double best = 0.0;
  bool feasible = evades_detection(ctx.honest, replicate_row(mu, ctx.f_count), *ctx.detector);
  for (int it = 0; it < 50; ++it) {
    const double cand = t + step;
    if (evades_detection(ctx.honest, replicate_row(mu + cand * p, ctx.f_count), *ctx.detector)) {
      t = cand;
      best = cand;
      feasible = true;
    } else {
      step *= 0.5;
    }
    if (step < 1e-9 * scale) break;
  }
  if (!feasible) return replicate_row(mu, ctx.f_count);  // null attack
  return replicate_row(mu + best * p, ctx.f_count);
}

Matrix nash_rows(const AttackContext& ctx, double lambda) {
  if (!ctx.detector) fail(ErrorCode::InvalidInput, "Nash attack requires detector knowledge");
  const Vector mu = ctx.honest_mean();
  const Vector sdev = ctx.honest_std();
  const Eigen::Index d = ctx.honest.cols();
  const double sigma = std::max(std::sqrt(sdev.squaredNorm() / static_cast<double>(d)), 1e-9);
  const double box = sigma * std::sqrt(static_cast<double>(d));  // ||g|| <= sigma*sqrt(d)
  Rng dir_rng(derive_seed(ctx.seed, kStreamNash, static_cast<std::uint64_t>(ctx.round)));
  const Vector p = perturbation_direction(mu, dir_rng);

  auto clip = [&](double t) {
    const Vector g = mu + t * p;
    const double norm = g.norm();
    return norm > box ? t * (box / norm) : t;  // conservative radial shrink
  };
  auto detection_prob = [&](double t) {
    const Vector g = mu + clip(t) * p;
    int hits = 0;
    for (int m = 0; m < 32; ++m) {
      // Honest resample from the attacker's moment estimates.
      Rng rng(derive_seed(ctx.seed, kStreamNash + 1, static_cast<std::uint64_t>(ctx.round),
                          static_cast<std::uint64_t>(m)));
      Matrix H(ctx.honest.rows(), d);
      for (Eigen::Index i = 0; i < H.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) H(i, j) = mu(j) + sdev(j) * rng.gaussian();
      if (!evades_detection(H, replicate_row(g, ctx.f_count), *ctx.detector)) ++hits;
    }
    return static_cast<double>(hits) / 32.0;
  };
  auto objective = [&](double t) {
    const double tc = clip(t);
    return tc * tc - lambda * detection_prob(t);
  };

  double t = 0.25 * box;
  double step = 0.25 * box;
  double val = objective(t);
  for (int it = 0; it < 50 && step > 1e-6 * box; ++it) {
    const double up = objective(std::min(t + step, box));
    const double down = objective(std::max(t - step, 0.0));
    if (up > val + 1e-12) {
      t = std::min(t + step, box);
      val = up;
    } else if (down > val + 1e-12) {
      t = std::max(t - step, 0.0);
      val = down;
    } else {
      step *= 0.5;
    }
  }
  return replicate_row(mu + clip(t) * p, ctx.f_count);
}

}  // namespace

void AttackSpec::validate() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(alpha) || !finite(z) || !finite(epsilon) || !finite(lambda) || !finite(sigma_a) ||
      !finite(drift))
    fail(ErrorCode::InvalidInput, "attack parameters must be finite");
  if (kind == AttackKind::SignFlip && alpha <= 0.0)
    fail(ErrorCode::InvalidInput, "sign-flip alpha must be > 0");
  if ((kind == AttackKind::IPM || kind == AttackKind::FallOfEmpires) && epsilon <= 0.0)
    fail(ErrorCode::InvalidInput, "epsilon must be > 0");
  if (kind == AttackKind::NashAdversary && lambda < 0.0)
    fail(ErrorCode::InvalidInput, "lambda must be >= 0");
  if (kind == AttackKind::GaussianNoise && sigma_a < 0.0)
    fail(ErrorCode::InvalidInput, "sigma_a must be >= 0");
  if (kind == AttackKind::BackdoorSurrogate && mask.size() != target.size())
    fail(ErrorCode::InvalidInput, "backdoor mask/target length mismatch");
}

Vector AttackContext::honest_mean() const { return honest.colwise().mean().transpose(); }

Vector AttackContext::honest_std() const {
  const Vector mu = honest_mean();
  Vector var = (honest.rowwise() - mu.transpose()).array().square().colwise().mean().transpose();
  return var.array().sqrt();
}

double alie_default_z(Eigen::Index n, Eigen::Index f) {
  if (n < 2 || f < 0 || f >= n) fail(ErrorCode::InvalidInput, "bad ALIE shape");
  const auto s = n / 2 + 1 - f;
  const double num = static_cast<double>(n - f - s);
  const double den = static_cast<double>(n - f);
  const double prob = std::clamp(num / den, 1e-12, 1.0 - 1e-12);
  return std::max(inverse_normal_cdf(prob), 0.0);
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorCode::InvalidInput, "probability must be in (0, 1)");
  // Acklam's rational approximation with one Halley refinement step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

Matrix generate_attack(const AttackSpec& spec, const AttackContext& ctx) {
  spec.validate();
  if (ctx.f_count < 1) fail(ErrorCode::InvalidInput, "f_count must be >= 1");
  if (ctx.honest.rows() < 1) fail(ErrorCode::InvalidInput, "attacker needs visible honest rows");
  if (!ctx.honest.allFinite()) fail(ErrorCode::InvalidInput, "honest rows must be finite");
  const Eigen::Index d = ctx.honest.cols();
  const Vector mu = ctx.honest_mean();

  switch (spec.kind) {
    case AttackKind::SignFlip:
      return replicate_row(-spec.alpha * mu, ctx.f_count);
    case AttackKind::ALIE: {
      const double z =
          spec.z >= 0.0 ? spec.z
                        : alie_default_z(ctx.honest.rows() + ctx.f_count, ctx.f_count);
      return replicate_row(mu - z * ctx.honest_std(), ctx.f_count);
    }
    case AttackKind::IPM:
      return replicate_row(-spec.epsilon * mu, ctx.f_count);
    case AttackKind::MinMax:
      return min_max_rows(ctx);
    case AttackKind::FallOfEmpires:
      return replicate_row(-spec.epsilon * mu, ctx.f_count);
    case AttackKind::ZeroGradient:
      return Matrix::Zero(ctx.f_count, d);
    case AttackKind::GaussianNoise: {
      Matrix out(ctx.f_count, d);
      Rng rng(derive_seed(ctx.seed, kStreamGauss, static_cast<std::uint64_t>(ctx.round)));
      for (Eigen::Index i = 0; i < ctx.f_count; ++i)
        for (Eigen::Index j = 0; j < d; ++j) out(i, j) = mu(j) + rng.gaussian(0.0, spec.sigma_a);
      return out;
    }
    case AttackKind::LabelFlipSurrogate: {
      // Negate a random half of the coordinates, same mask for every attacker.
      Rng rng(derive_seed(ctx.seed, kStreamMask, static_cast<std::uint64_t>(ctx.round)));
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(d));
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng.engine());
      Vector row = mu;
      for (Eigen::Index j = 0; j < d / 2; ++j) row(idx[static_cast<std::size_t>(j)]) *= -1.0;
      return replicate_row(row, ctx.f_count);
    }
    case AttackKind::ModelPoisonSurrogate: {
      // Direction is seeded without the round so the drift accumulates along
      // a fixed axis.
      Rng rng(derive_seed(ctx.seed, kStreamPoisonDir));
      const Vector u = random_unit(rng, d);
      return replicate_row(mu + spec.drift * static_cast<double>(ctx.round + 1) * u, ctx.f_count);
    }
    case AttackKind::BackdoorSurrogate: {
      Vector row = mu;
      for (std::size_t m = 0; m < spec.mask.size(); ++m) {
        const Eigen::Index j = spec.mask[m];
        if (j < 0 || j >= d) fail(ErrorCode::InvalidInput, "backdoor mask coordinate out of range");
        row(j) = spec.target[m];
      }
      return replicate_row(row, ctx.f_count);
    }
    case AttackKind::AdaptiveSpectral:
      return adaptive_spectral_rows(ctx);
    case AttackKind::NashAdversary:
      return nash_rows(ctx, spec.lambda);
  }
  fail(ErrorCode::InvalidInput, "unknown attack kind");
}

namespace {
const std::pair<const char*, AttackKind> kAttackNames[] = {
    {"sign_flip", AttackKind::SignFlip},
    {"alie", AttackKind::ALIE},
    {"ipm", AttackKind::IPM},
    {"min_max", AttackKind::MinMax},
    {"fall_of_empires", AttackKind::FallOfEmpires},
    {"label_flip", AttackKind::LabelFlipSurrogate},
    {"zero", AttackKind::ZeroGradient},
    {"gauss", AttackKind::GaussianNoise},
    {"model_poison", AttackKind::ModelPoisonSurrogate},
    {"backdoor", AttackKind::BackdoorSurrogate},
    {"adaptive_spectral", AttackKind::AdaptiveSpectral},
    {"nash", AttackKind::NashAdversary},
};
}  // namespace

AttackKind attack_kind_from_name(const std::string& name) {
  for (const auto& [n, k] : kAttackNames)
    if (name == n) return k;
  fail(ErrorCode::InvalidInput, "unknown attack: " + name);
}

const char* attack_kind_name(AttackKind kind) {
  for (const auto& [n, k] : kAttackNames)
    if (k == kind) return n;
  return "unknown";
}

std::vector<std::string> attack_names() {
  std::vector<std::string> out;
  for (const auto& [n, k] : kAttackNames) out.emplace_back(n);
  return out;
}

}  // namespace sentinel
