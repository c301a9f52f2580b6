#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sentinel/sim.hpp"

using namespace sentinel;

TEST_CASE("quadratic gradients are exact when sigma = 0") {
  HonestModel model(TaskKind::Quadratic, 8, 4, 0.0, 0.5, 7);
  Rng noise(1);
  Vector w = Vector::Ones(8);
  for (Eigen::Index i = 0; i < 4; ++i) {
    Vector g = model.client_gradient(i, w, noise);
    // grad F_i = w - w* - delta_i; recover delta_i and cross-check the loss.
    Vector delta = w - model.w_star() - g;
    CHECK((model.client_gradient(i, w, noise) - g).norm() < 1e-15);
    CHECK(g.dot(g) == doctest::Approx((w - model.w_star() - delta).squaredNorm()));
  }
  // Population gradient vanishes at w* + mean shift.
  Vector opt = model.w_star();
  Vector mean_g = model.true_gradient(opt);
  Vector shift_mean = opt - model.w_star() - mean_g;  // = mean of deltas
  CHECK(model.true_gradient(model.w_star() + shift_mean).norm() < 1e-12);
}

TEST_CASE("gradient noise variance matches sigma^2") {
  const double sigma = 1.5;
  HonestModel model(TaskKind::Quadratic, 4, 2, sigma, 0.0, 8);
  Rng noise(99);
  Vector w = Vector::Zero(4);
  Vector mean = model.client_gradient(0, w, noise);
  double acc = 0.0;
  const int trials = 4000;
  Vector clean;
  {
    HonestModel m0(TaskKind::Quadratic, 4, 2, 0.0, 0.0, 8);
    Rng z(1);
    clean = m0.client_gradient(0, w, z);
  }
  for (int t = 0; t < trials; ++t) {
    Vector g = model.client_gradient(0, w, noise);
    acc += (g - clean).squaredNorm() / 4.0;
  }
  const double var = acc / trials;
  CHECK(var > 0.8 * sigma * sigma);
  CHECK(var < 1.2 * sigma * sigma);
}

TEST_CASE("logistic task produces finite gradients and decreasing loss") {
  HonestModel model(TaskKind::Logistic, 6, 3, 0.0, 0.3, 9);
  Vector w = Vector::Zero(6);
  const double l0 = model.loss(w);
  for (int t = 0; t < 200; ++t) w -= 0.5 * model.true_gradient(w);
  CHECK(model.loss(w) < l0);
  CHECK(model.true_gradient(w).allFinite());
}

TEST_CASE("clean fedavg on the quadratic contracts at the exact rate") {
  ExperimentConfig cfg;
  cfg.n = 8;
  cfg.f_count = 0;
  cfg.d = 16;
  cfg.rounds = 6;
  cfg.eta = 0.5;
  cfg.sigma = 0.0;
  cfg.sigma_het = 0.0;
  cfg.aggregator = "fedavg";
  cfg.record_detection = false;
  cfg.seed = 11;
  RunResult r = run_experiment(cfg);
  // grad F(w) = w - w*; the step halves it, so the norm^2 quarters per round.
  for (int t = 1; t < 6; ++t)
    CHECK(r.rounds[t].grad_norm2 ==
          doctest::Approx(0.25 * r.rounds[t - 1].grad_norm2).epsilon(1e-9));
  CHECK(r.final_grad_norm2 < r.rounds[0].grad_norm2 * 1e-3);
}

TEST_CASE("mean staleness is zero when synchronous and near tau/2 when async") {
  ExperimentConfig cfg;
  cfg.n = 32;
  cfg.f_count = 0;
  cfg.d = 8;
  cfg.rounds = 40;
  cfg.sigma = 0.1;
  cfg.aggregator = "fedavg";
  cfg.record_detection = false;
  cfg.seed = 12;
  RunResult sync = run_experiment(cfg);
  for (const auto& m : sync.rounds) CHECK(m.mean_staleness == 0.0);

  cfg.tau_max = 10;
  RunResult async = run_experiment(cfg);
  double total = 0.0;
  for (int t = 20; t < 40; ++t) total += async.rounds[static_cast<std::size_t>(t)].mean_staleness;
  const double mean_late = total / 20.0;  // past warm-up: uniform{0..10} has mean 5
  CHECK(mean_late > 3.5);
  CHECK(mean_late < 6.5);
  // Warm-up rounds can only use the short history.
  CHECK(async.rounds[0].mean_staleness == 0.0);
}

TEST_CASE("dp_inject clips norms and vanishes at huge epsilon") {
  Rng rng(13);
  Matrix G(4, 6);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < 6; ++j) G(i, j) = rng.gaussian(0.0, 3.0);
  Rng noise(14);
  Matrix out = dp_inject(G, 1e12, 1.0, noise);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(out.row(i).norm() <= 1.0 + 1e-6);
    const double n0 = G.row(i).norm();
    Vector want = G.row(i).transpose() * (n0 > 1.0 ? 1.0 / n0 : 1.0);
    CHECK((out.row(i).transpose() - want).norm() < 1e-6);
  }
  // Small epsilon injects variance close to the Gaussian-mechanism scale.
  const double eps = 2.0;
  const double sigma_dp = std::sqrt(2.0 * std::log(1.25 / 1e-5)) / eps;
  double acc = 0.0;
  const int trials = 500;
  Matrix small = Matrix::Zero(1, 6);
  for (int t = 0; t < trials; ++t) {
    Matrix noisy = dp_inject(small, eps, 1.0, noise);
    acc += noisy.squaredNorm() / 6.0;
  }
  CHECK(acc / trials == doctest::Approx(sigma_dp * sigma_dp).epsilon(0.2));
  CHECK_THROWS_AS(dp_inject(G, 0.0, 1.0, noise), Error);
}

TEST_CASE("assemble_round shuffles without losing rows") {
  Rng rng(15);
  Matrix honest(5, 3), byz(3, 3);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) honest(i, j) = rng.gaussian();
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) byz(i, j) = 100.0 + rng.gaussian();

  std::vector<Eigen::Index> byz_pos;
  std::vector<Eigen::Index> client_of_pos;
  GradientMatrix G = assemble_round(honest, byz, 77, 3, byz_pos, &client_of_pos);
  REQUIRE(G.data.rows() == 8);
  CHECK(byz_pos.size() == 3);
  std::vector<bool> seen(8, false);
  for (Eigen::Index pos = 0; pos < 8; ++pos) {
    const Eigen::Index src = client_of_pos[static_cast<std::size_t>(pos)];
    CHECK_FALSE(seen[static_cast<std::size_t>(src)]);
    seen[static_cast<std::size_t>(src)] = true;
    const Matrix& block = src < 5 ? honest : byz;
    const Eigen::Index row = src < 5 ? src : src - 5;
    CHECK((G.data.row(pos) - block.row(row)).norm() == 0.0);
    const bool is_byz = std::find(byz_pos.begin(), byz_pos.end(), pos) != byz_pos.end();
    CHECK(is_byz == (src >= 5));
  }
  // Different rounds give different permutations (almost surely).
  std::vector<Eigen::Index> pos2, map2;
  assemble_round(honest, byz, 77, 4, pos2, &map2);
  CHECK(map2 != client_of_pos);
}

TEST_CASE("run_experiment is bit-deterministic") {
  ExperimentConfig cfg;
  cfg.n = 16;
  cfg.f_count = 3;
  cfg.d = 24;
  cfg.rounds = 12;
  cfg.attack.kind = AttackKind::SignFlip;
  cfg.attack.alpha = 4.0;
  cfg.detector.f_max = 0.3;
  cfg.seed = 20;
  RunResult a = run_experiment(cfg);
  RunResult b = run_experiment(cfg);
  CHECK(a.final_w == b.final_w);
  REQUIRE(a.rounds.size() == b.rounds.size());
  for (std::size_t t = 0; t < a.rounds.size(); ++t) {
    CHECK(a.rounds[t].grad_norm2 == b.rounds[t].grad_norm2);
    CHECK(a.rounds[t].flagged == b.rounds[t].flagged);
  }
}

TEST_CASE("sentinel screening beats fedavg under a strong attack") {
  ExperimentConfig cfg;
  cfg.n = 24;
  cfg.f_count = 5;
  cfg.d = 48;
  cfg.rounds = 30;
  cfg.eta = 0.1;
  cfg.sigma = 0.5;
  cfg.attack.kind = AttackKind::SignFlip;
  cfg.attack.alpha = 10.0;
  cfg.detector.f_max = 0.3;
  cfg.seed = 21;
  cfg.aggregator = "sentinel";
  RunResult sent = run_experiment(cfg);
  cfg.aggregator = "fedavg";
  RunResult avg = run_experiment(cfg);
  CHECK(sent.final_grad_norm2 < avg.final_grad_norm2);
  CHECK(sent.mean_recall > 0.8);
}

TEST_CASE("detection period reuses bans between screenings") {
  ExperimentConfig cfg;
  cfg.n = 16;
  cfg.f_count = 3;
  cfg.d = 32;
  cfg.rounds = 10;
  cfg.attack.kind = AttackKind::SignFlip;
  cfg.attack.alpha = 10.0;
  cfg.detector.f_max = 0.3;
  cfg.detector.detection_period = 5;
  cfg.seed = 22;
  RunResult r = run_experiment(cfg);
  int ran = 0;
  for (const auto& m : r.rounds) ran += m.detection_ran ? 1 : 0;
  CHECK(ran == 2);  // rounds 0 and 5 only
  // Non-screening rounds still keep the aggregate clean: the banned attacker
  // rows are excluded, so agg error stays well below the attack magnitude.
  for (int t = 1; t < 5; ++t)
    CHECK(r.rounds[static_cast<std::size_t>(t)].agg_error2 < 10.0);
}

TEST_CASE("ledger-backed run commits every update verifiably") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sentinel_test_simledger";
  fs::remove_all(dir);
  ExperimentConfig cfg;
  cfg.n = 8;
  cfg.f_count = 0;
  cfg.d = 6;
  cfg.rounds = 4;
  cfg.aggregator = "fedavg";
  cfg.record_detection = false;
  cfg.use_ledger = true;
  cfg.ledger_dir = dir.string();
  cfg.seed = 23;
  run_experiment(cfg);

  auto led = Ledger::replay(dir);
  REQUIRE(led);
  for (std::uint64_t r = 0; r < 4; ++r) {
    RoundRecord rec = led->get_round_info(r);
    CHECK(rec.status == RoundStatus::Finalized);
    CHECK(rec.submissions.size() == 8);
    for (std::uint64_t c = 0; c < 8; ++c) {
      auto bytes = led->load_blob(r, c);
      CHECK(verify_commitment(bytes, led->get_update_hash(r, c)));
    }
  }
}

TEST_CASE("config validation rejects bad shapes") {
  ExperimentConfig cfg;
  cfg.n = 8;
  cfg.f_count = 4;  // violates f < n/2
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.f_count = 3;
  cfg.eta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.eta = 0.1;
  cfg.tau_max = -1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
