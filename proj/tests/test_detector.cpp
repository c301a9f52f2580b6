#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sentinel/detector.hpp"
#include "sentinel/rng.hpp"

using namespace sentinel;

namespace {

Matrix random_matrix(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double sigma = 1.0) {
  Rng rng(seed);
  Matrix M(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) M(i, j) = rng.gaussian(0.0, sigma);
  return M;
}

GradientMatrix planted_attack(Eigen::Index n, Eigen::Index d, Eigen::Index f, double shift,
                              std::uint64_t seed, std::vector<Eigen::Index>* byz = nullptr) {
  GradientMatrix G{random_matrix(n, d, seed)};
  Rng rng(seed ^ 0xBEEF);
  Vector u(d);
  for (Eigen::Index j = 0; j < d; ++j) u(j) = rng.gaussian();
  u /= u.norm();
  for (Eigen::Index i = 0; i < f; ++i) {
    G.data.row(i) += shift * u.transpose();
    if (byz) byz->push_back(i);
  }
  return G;
}

}  // namespace

TEST_CASE("detector requires at least four clients") {
  GradientMatrix G{random_matrix(3, 8, 1)};
  DetectorConfig cfg;
  CHECK_THROWS_AS(detect(G, cfg), Error);
  try {
    detect(G, cfg);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientClients);
  }
}

TEST_CASE("all-zero round is degenerate and all-honest") {
  GradientMatrix G{Matrix::Zero(8, 16)};
  DetectorConfig cfg;
  DetectionReport r = detect(G, cfg);
  CHECK(r.degenerate);
  CHECK(r.flagged.empty());
  CHECK(r.honest.size() == 8);
}

TEST_CASE("honest gaussian rounds rarely flag anyone") {
  DetectorConfig cfg;
  cfg.f_max = 0.25;
  int flagged_rounds = 0;
  for (int s = 0; s < 30; ++s) {
    GradientMatrix G{random_matrix(64, 256, 3000 + static_cast<std::uint64_t>(s))};
    DetectionReport r = detect(G, cfg);
    if (!r.flagged.empty() || r.ks.reject) ++flagged_rounds;
  }
  CHECK(flagged_rounds <= 3);
}

TEST_CASE("planted strong attack is identified exactly") {
  DetectorConfig cfg;
  cfg.f_max = 0.3;
  std::vector<Eigen::Index> byz;
  GradientMatrix G = planted_attack(64, 256, 12, 25.0, 3100, &byz);
  DetectionReport r = detect(G, cfg);
  CHECK(r.flagged == byz);
  CHECK(r.honest.size() == 52);
}

TEST_CASE("flag set is equivariant under row permutation") {
  DetectorConfig cfg;
  cfg.f_max = 0.3;
  GradientMatrix G = planted_attack(32, 64, 6, 20.0, 3200);
  DetectionReport base = detect(G, cfg);
  REQUIRE(!base.flagged.empty());

  // Reverse the rows; flags must follow the permutation.
  GradientMatrix P{Matrix(G.data.colwise().reverse())};
  DetectionReport perm = detect(P, cfg);
  std::vector<Eigen::Index> mapped;
  for (Eigen::Index i : base.flagged) mapped.push_back(31 - i);
  std::sort(mapped.begin(), mapped.end());
  CHECK(perm.flagged == mapped);
}

TEST_CASE("detection decision is scale invariant") {
  DetectorConfig cfg;
  cfg.f_max = 0.3;
  GradientMatrix G = planted_attack(32, 64, 6, 20.0, 3300);
  DetectionReport a = detect(G, cfg);
  GradientMatrix S{Matrix(1000.0 * G.data)};
  DetectionReport b = detect(S, cfg);
  CHECK(a.flagged == b.flagged);
  CHECK(a.ks.statistic == doctest::Approx(b.ks.statistic).epsilon(1e-9));
}

TEST_CASE("sketch with k >= n short-circuits to the full path") {
  DetectorConfig full;
  full.f_max = 0.3;
  DetectorConfig sk = full;
  sk.sketch_size = 64;  // >= n = 32
  for (std::uint64_t s = 0; s < 10; ++s) {
    GradientMatrix G = planted_attack(32, 128, 5, 18.0, 3400 + s);
    DetectionReport a = detect(G, full);
    DetectionReport b = detect(G, sk);
    CHECK(a.flagged == b.flagged);
    CHECK(a.ks.statistic == b.ks.statistic);  // bit-exact
  }
}

TEST_CASE("lossy sketch still catches a strong planted attack") {
  DetectorConfig sk;
  sk.f_max = 0.3;
  sk.sketch_size = 24;  // < n = 64
  std::vector<Eigen::Index> byz;
  GradientMatrix G = planted_attack(64, 128, 8, 25.0, 3500, &byz);
  DetectionReport r = detect(G, sk);
  int tp = 0;
  for (Eigen::Index i : r.flagged)
    if (i < 8) ++tp;
  CHECK(tp >= 6);
}

TEST_CASE("flag count never exceeds the f_max cap") {
  DetectorConfig cfg;
  cfg.f_max = 0.1;  // cap = 3 at n = 32
  GradientMatrix G = planted_attack(32, 64, 10, 25.0, 3600);
  DetectionReport r = detect(G, cfg);
  CHECK(r.flagged.size() <= 3);
}

TEST_CASE("update_thresholds follows the accepted-round quantile") {
  std::vector<KsResult> hist;
  for (int i = 0; i < 20; ++i) hist.push_back({0.03, 64, 0.1, false});
  CHECK(update_thresholds(hist, 50, 0.5) == doctest::Approx(0.033).epsilon(1e-12));

  // Rejected rounds are excluded from the window.
  hist.push_back({0.9, 64, 0.1, true});
  CHECK(update_thresholds(hist, 50, 0.5) == doctest::Approx(0.033).epsilon(1e-12));

  // Too few accepted samples: calibration fallback.
  std::vector<KsResult> few(5, KsResult{0.03, 64, 0.1, false});
  CHECK(update_thresholds(few, 50, 0.42) == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("phase regime boundaries") {
  double s2f2 = 0.0;
  // sigma_hat chosen so sigma^2 f^2 lands strictly inside each regime; exact
  // boundary values are not representable after the sqrt round trip.
  const double f = 0.4;
  CHECK(phase_regime(std::sqrt(0.19) / f, f) == PhaseRegime::Detectable);
  CHECK(phase_regime(std::sqrt(0.205) / f, f) == PhaseRegime::Transition);
  CHECK(phase_regime(std::sqrt(0.2499) / f, f) == PhaseRegime::Transition);
  CHECK(phase_regime(std::sqrt(0.2501) / f, f, &s2f2) == PhaseRegime::Undetectable);
  CHECK(s2f2 == doctest::Approx(0.2501).epsilon(1e-9));
}

TEST_CASE("layer-wise detection unions per-layer flags") {
  DetectorConfig cfg;
  cfg.f_max = 0.3;
  // Attack confined to the second of two layers.
  GradientMatrix clean{random_matrix(32, 64, 3700)};
  GradientMatrix dirty = planted_attack(32, 64, 5, 22.0, 3701);
  LayeredGradients L;
  L.layers = {clean, dirty};
  L.names = {"a", "b"};
  DetectionReport r = detect_layerwise(L, cfg);
  REQUIRE(r.per_layer.size() == 2);
  int tp = 0;
  for (Eigen::Index i : r.flagged)
    if (i < 5) ++tp;
  CHECK(tp >= 4);
  CHECK(r.flagged.size() + r.honest.size() == 32);
}

TEST_CASE("config validation") {
  DetectorConfig cfg;
  cfg.f_max = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.f_max = 0.49;
  cfg.sketch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.sketch_size = 0;
  cfg.detection_period = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
