#include <doctest.h>

#include <cmath>

#include "sentinel/attacks.hpp"

using namespace sentinel;

namespace {

AttackContext make_ctx(Eigen::Index nh, Eigen::Index d, Eigen::Index f, std::uint64_t seed,
                       double sigma = 1.0, double mean = 1.0) {
  AttackContext ctx;
  Rng rng(seed);
  ctx.honest.resize(nh, d);
  for (Eigen::Index i = 0; i < nh; ++i)
    for (Eigen::Index j = 0; j < d; ++j) ctx.honest(i, j) = mean + rng.gaussian(0.0, sigma);
  ctx.f_count = f;
  ctx.round = 0;
  ctx.seed = seed;
  return ctx;
}

}  // namespace

TEST_CASE("sign flip negates and scales the honest mean") {
  AttackContext ctx;
  ctx.honest.resize(2, 2);
  ctx.honest << 1.0, 0.0, 1.0, 0.0;  // mu = (1, 0)
  ctx.f_count = 2;
  AttackSpec spec;
  spec.kind = AttackKind::SignFlip;
  spec.alpha = 1.0;
  Matrix rows = generate_attack(spec, ctx);
  CHECK(rows(0, 0) == doctest::Approx(-1.0));
  CHECK(rows(0, 1) == doctest::Approx(0.0));
  spec.alpha = 10.0;
  rows = generate_attack(spec, ctx);
  CHECK(rows(1, 0) == doctest::Approx(-10.0));
}

TEST_CASE("ALIE with z = 0 is perfect camouflage") {
  AttackContext ctx = make_ctx(10, 4, 3, 11);
  AttackSpec spec;
  spec.kind = AttackKind::ALIE;
  spec.z = 0.0;
  Matrix rows = generate_attack(spec, ctx);
  const Vector mu = ctx.honest_mean();
  for (Eigen::Index i = 0; i < 3; ++i) CHECK((rows.row(i).transpose() - mu).norm() < 1e-12);

  spec.z = 1.0;
  rows = generate_attack(spec, ctx);
  const Vector want = mu - ctx.honest_std();
  CHECK((rows.row(0).transpose() - want).norm() < 1e-12);
}

TEST_CASE("default ALIE z comes from the classical formula") {
  // n=20, f=4: s = 10+1-4 = 7, z = Phi^-1((20-4-7)/(20-4)) = Phi^-1(9/16).
  const double z = alie_default_z(20, 4);
  const double want = inverse_normal_cdf(9.0 / 16.0);
  CHECK(z == doctest::Approx(want).epsilon(1e-12));
  // Inverse CDF sanity against the error function.
  for (double p : {0.01, 0.3, 0.5, 0.7, 0.975}) {
    const double x = inverse_normal_cdf(p);
    CHECK(0.5 * std::erfc(-x / std::sqrt(2.0)) == doctest::Approx(p).epsilon(1e-8));
  }
}

TEST_CASE("IPM flips the aggregate inner product when attackers suffice") {
  AttackContext ctx = make_ctx(10, 4, 10, 22, 0.0, 1.0);  // mu exactly (1,1,1,1)
  AttackSpec spec;
  spec.kind = AttackKind::IPM;
  spec.epsilon = 2.0;
  Matrix rows = generate_attack(spec, ctx);
  const Vector mu = ctx.honest_mean();
  // 10 honest at mu, 10 attackers at -2mu: mean = -0.5 mu, inner product < 0.
  Vector agg = (10.0 * mu + rows.colwise().sum().transpose()) / 20.0;
  CHECK(agg.dot(mu) < 0.0);
}

TEST_CASE("zero and gaussian attacks") {
  AttackContext ctx = make_ctx(8, 3, 2, 33);
  AttackSpec spec;
  spec.kind = AttackKind::ZeroGradient;
  CHECK(generate_attack(spec, ctx).isZero(0.0));

  spec.kind = AttackKind::GaussianNoise;
  spec.sigma_a = 0.0;
  Matrix rows = generate_attack(spec, ctx);
  const Vector mu = ctx.honest_mean();
  for (Eigen::Index i = 0; i < 2; ++i) CHECK((rows.row(i).transpose() - mu).norm() < 1e-12);
}

TEST_CASE("min-max collapses to the mean for identical honest rows") {
  AttackContext ctx;
  ctx.honest = Matrix::Ones(6, 3);
  ctx.f_count = 2;
  ctx.seed = 44;
  AttackSpec spec;
  spec.kind = AttackKind::MinMax;
  Matrix rows = generate_attack(spec, ctx);
  for (Eigen::Index i = 0; i < 2; ++i)
    CHECK((rows.row(i).transpose() - Vector::Ones(3)).norm() < 1e-12);
}

TEST_CASE("min-max 1-D two-client case solves gamma = 1") {
  AttackContext ctx;
  ctx.honest.resize(2, 1);
  ctx.honest << 0.0, 2.0;  // mu = 1, diameter = 2
  ctx.f_count = 1;
  ctx.seed = 45;
  AttackSpec spec;
  spec.kind = AttackKind::MinMax;
  Matrix rows = generate_attack(spec, ctx);
  // p = -mu/|mu| = -1; the row is 1 - gamma with |1 - gamma - 2| <= 2 so
  // gamma* = 1 and the crafted row sits at 0.
  CHECK(rows(0, 0) == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("min-max binary search matches grid search") {
  AttackContext ctx = make_ctx(8, 3, 1, 46);
  AttackSpec spec;
  spec.kind = AttackKind::MinMax;
  Matrix rows = generate_attack(spec, ctx);
  const Vector g = rows.row(0).transpose();
  const Vector mu = ctx.honest_mean();
  double diameter = 0.0;
  for (Eigen::Index i = 0; i < 8; ++i)
    for (Eigen::Index j = i + 1; j < 8; ++j)
      diameter = std::max(diameter, (ctx.honest.row(i) - ctx.honest.row(j)).norm());
  const double gamma_star = (g - mu).norm();
  // Grid search over gamma along the same direction.
  const Vector p = (g - mu) / gamma_star;
  double best = 0.0;
  for (double gam = 0.0; gam < 4.0 * diameter; gam += 1e-4) {
    double maxdist = 0.0;
    for (Eigen::Index i = 0; i < 8; ++i)
      maxdist = std::max(maxdist, (mu + gam * p - ctx.honest.row(i).transpose()).norm());
    if (maxdist <= diameter) best = gam;
  }
  CHECK(gamma_star == doctest::Approx(best).epsilon(1e-3));
}

TEST_CASE("model poison drift accumulates linearly over rounds") {
  AttackContext ctx = make_ctx(6, 4, 1, 47);
  AttackSpec spec;
  spec.kind = AttackKind::ModelPoisonSurrogate;
  spec.drift = 0.25;
  const Vector mu = ctx.honest_mean();
  Matrix r0 = generate_attack(spec, ctx);
  ctx.round = 3;
  Matrix r3 = generate_attack(spec, ctx);
  const Vector d0 = r0.row(0).transpose() - mu;
  const Vector d3 = r3.row(0).transpose() - mu;
  CHECK(d0.norm() == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(d3.norm() == doctest::Approx(1.0).epsilon(1e-9));
  // Same fixed direction across rounds.
  CHECK((d3 / d3.norm() - d0 / d0.norm()).norm() < 1e-9);
}

TEST_CASE("backdoor mask validation and application") {
  AttackContext ctx = make_ctx(6, 4, 2, 48);
  AttackSpec spec;
  spec.kind = AttackKind::BackdoorSurrogate;
  spec.mask = {1, 3};
  spec.target = {9.0, -9.0};
  Matrix rows = generate_attack(spec, ctx);
  CHECK(rows(0, 1) == doctest::Approx(9.0));
  CHECK(rows(1, 3) == doctest::Approx(-9.0));
  const Vector mu = ctx.honest_mean();
  CHECK(rows(0, 0) == doctest::Approx(mu(0)));

  spec.mask = {7};
  spec.target = {1.0};
  CHECK_THROWS_AS(generate_attack(spec, ctx), Error);
}

TEST_CASE("fixed seed gives identical Byzantine rows for every kind") {
  for (const auto& name : attack_names()) {
    AttackContext ctx = make_ctx(12, 6, 3, 0xD00D);
    AttackSpec spec;
    spec.kind = attack_kind_from_name(name);
    if (spec.kind == AttackKind::BackdoorSurrogate) {
      spec.mask = {0};
      spec.target = {2.0};
    }
    if (spec.kind == AttackKind::AdaptiveSpectral || spec.kind == AttackKind::NashAdversary)
      ctx.detector = DetectorConfig{};
    Matrix a = generate_attack(spec, ctx);
    Matrix b = generate_attack(spec, ctx);
    CHECK(a == b);
  }
}

TEST_CASE("knowledge firewall: honest-stats attacks ignore detector config") {
  for (const auto& name : attack_names()) {
    AttackSpec spec;
    spec.kind = attack_kind_from_name(name);
    if (spec.kind == AttackKind::AdaptiveSpectral || spec.kind == AttackKind::NashAdversary)
      continue;
    if (spec.kind == AttackKind::BackdoorSurrogate) {
      spec.mask = {0};
      spec.target = {2.0};
    }
    AttackContext ctx = make_ctx(12, 6, 3, 0xF00);
    Matrix without = generate_attack(spec, ctx);
    ctx.detector = DetectorConfig{};
    ctx.detector->tau_ks = 0.001;
    Matrix with = generate_attack(spec, ctx);
    CHECK(without == with);
  }
}

TEST_CASE("adaptive spectral output evades its own detector") {
  AttackContext ctx = make_ctx(24, 32, 4, 0xADA);
  ctx.detector = DetectorConfig{};
  ctx.detector->f_max = 0.3;
  AttackSpec spec;
  spec.kind = AttackKind::AdaptiveSpectral;
  Matrix rows = generate_attack(spec, ctx);

  GradientMatrix G;
  G.data.resize(28, 32);
  G.data.topRows(24) = ctx.honest;
  G.data.bottomRows(4) = rows;
  DetectionReport r = detect(G, *ctx.detector);
  CHECK_FALSE(r.ks.reject);
  for (Eigen::Index i : r.flagged) CHECK(i < 24);
}

TEST_CASE("nash attacker magnitude stays inside the norm box") {
  AttackContext ctx = make_ctx(16, 8, 2, 0xA5A, 1.0, 0.0);
  ctx.detector = DetectorConfig{};
  ctx.detector->f_max = 0.3;
  AttackSpec spec;
  spec.kind = AttackKind::NashAdversary;
  spec.lambda = 1.0;
  Matrix rows = generate_attack(spec, ctx);
  const Vector sdev = ctx.honest_std();
  const double sigma = std::sqrt(sdev.squaredNorm() / 8.0);
  CHECK(rows.row(0).norm() <= sigma * std::sqrt(8.0) + 1e-9);
}

TEST_CASE("attack spec validation") {
  AttackSpec spec;
  spec.kind = AttackKind::SignFlip;
  spec.alpha = -1.0;
  CHECK_THROWS_AS(spec.validate(), Error);
  spec.alpha = 1.0;
  spec.kind = AttackKind::BackdoorSurrogate;
  spec.mask = {0, 1};
  spec.target = {1.0};
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK_THROWS_AS(attack_kind_from_name("bogus"), Error);
}
