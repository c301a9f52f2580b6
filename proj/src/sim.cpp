#include "sentinel/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace sentinel {

namespace {

// RNG stream purposes; keeping them disjoint means e.g. async delay draws
// never perturb the gradient-noise stream.
enum : std::uint64_t {
  kStreamModel = 0x10,
  kStreamGrad = 0x11,
  kStreamShuffle = 0x12,
  kStreamDelay = 0x13,
  kStreamDp = 0x14,
  kStreamAttack = 0x15,
};

constexpr int kLogisticPoints = 64;

double sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

}  // namespace

HonestModel::HonestModel(TaskKind task, Eigen::Index d, Eigen::Index n_clients, double sigma,
                         double sigma_het, std::uint64_t seed)
    : task_(task), d_(d), n_clients_(n_clients), sigma_(sigma) {
  if (d < 1 || n_clients < 1) fail(ErrorCode::InvalidInput, "model needs d >= 1, n >= 1");
  if (sigma < 0.0 || sigma_het < 0.0) fail(ErrorCode::InvalidInput, "negative noise scale");
  Rng rng(derive_seed(seed, kStreamModel));
  w_star_ = Vector(d);
  for (Eigen::Index j = 0; j < d; ++j) w_star_(j) = rng.gaussian();
  shifts_ = Matrix::Zero(n_clients, d);
  for (Eigen::Index i = 0; i < n_clients; ++i)
    for (Eigen::Index j = 0; j < d; ++j) shifts_(i, j) = rng.gaussian(0.0, sigma_het);
  if (task_ == TaskKind::Logistic) {
    X_.resize(static_cast<std::size_t>(n_clients));
    y_.resize(static_cast<std::size_t>(n_clients));
    for (Eigen::Index i = 0; i < n_clients; ++i) {
      Matrix X(kLogisticPoints, d);
      Vector y(kLogisticPoints);
      for (int p = 0; p < kLogisticPoints; ++p) {
        for (Eigen::Index j = 0; j < d; ++j)
          X(p, j) = rng.gaussian() + shifts_(i, j);  // heterogeneity enters through features
        const double margin = X.row(p).dot(w_star_) / std::sqrt(static_cast<double>(d));
        y(p) = rng.uniform() < sigmoid(margin) ? 1.0 : 0.0;
      }
      X_[static_cast<std::size_t>(i)] = std::move(X);
      y_[static_cast<std::size_t>(i)] = std::move(y);
    }
  }
}

Vector HonestModel::client_mean_gradient(Eigen::Index client, const Vector& w) const {
  if (task_ == TaskKind::Quadratic) return w - w_star_ - shifts_.row(client).transpose();
  const Matrix& X = X_[static_cast<std::size_t>(client)];
  const Vector& y = y_[static_cast<std::size_t>(client)];
  Vector margins = X * w;
  Vector residual(kLogisticPoints);
  for (int p = 0; p < kLogisticPoints; ++p) residual(p) = sigmoid(margins(p)) - y(p);
  return X.transpose() * residual / static_cast<double>(kLogisticPoints);
}

Vector HonestModel::client_gradient(Eigen::Index client, const Vector& w, Rng& noise_rng) const {
  if (client < 0 || client >= n_clients_) fail(ErrorCode::InvalidInput, "client out of range");
  Vector g = client_mean_gradient(client, w);
  for (Eigen::Index j = 0; j < d_; ++j) g(j) += noise_rng.gaussian(0.0, sigma_);
  return g;
}

Vector HonestModel::true_gradient(const Vector& w) const {
  Vector g = Vector::Zero(d_);
  for (Eigen::Index i = 0; i < n_clients_; ++i) g += client_mean_gradient(i, w);
  return g / static_cast<double>(n_clients_);
}

double HonestModel::loss(const Vector& w) const {
  if (task_ == TaskKind::Quadratic) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n_clients_; ++i)
      total += 0.5 * (w - w_star_ - shifts_.row(i).transpose()).squaredNorm();
    return total / static_cast<double>(n_clients_);
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n_clients_; ++i) {
    const Matrix& X = X_[static_cast<std::size_t>(i)];
    const Vector& y = y_[static_cast<std::size_t>(i)];
    Vector margins = X * w;
    for (int p = 0; p < kLogisticPoints; ++p) {
      const double m = margins(p);
      // log(1 + e^m) - y*m, computed stably.
      total += (m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m))) - y(p) * m;
    }
  }
  return total / static_cast<double>(n_clients_ * kLogisticPoints);
}

void ExperimentConfig::validate() const {
  if (n < 2) fail(ErrorCode::InvalidInput, "n must be >= 2");
  if (f_count < 0 || 2 * f_count >= n)
    fail(ErrorCode::InvalidInput, "threat model requires f < n/2");
  if (rounds < 1) fail(ErrorCode::InvalidInput, "rounds must be >= 1");
  if (eta <= 0.0) fail(ErrorCode::InvalidInput, "eta must be > 0");
  if (sigma < 0.0 || sigma_het < 0.0) fail(ErrorCode::InvalidInput, "negative noise scale");
  if (tau_max < 0) fail(ErrorCode::InvalidInput, "tau_max must be >= 0");
  if (dp && (dp->epsilon <= 0.0 || dp->clip <= 0.0))
    fail(ErrorCode::InvalidInput, "dp requires epsilon > 0, clip > 0");
  attack.validate();
  detector.validate();
}

Matrix dp_inject(const Matrix& G, double epsilon, double clip, Rng& rng) {
  if (epsilon <= 0.0 || clip <= 0.0) fail(ErrorCode::InvalidInput, "dp requires epsilon, clip > 0");
  const double delta_dp = 1e-5;
  const double sigma_dp = clip * std::sqrt(2.0 * std::log(1.25 / delta_dp)) / epsilon;
  Matrix out = G;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > clip) out.row(i) *= clip / norm;
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) += rng.gaussian(0.0, sigma_dp);
  }
  return out;
}

GradientMatrix assemble_round(const Matrix& honest, const Matrix& byz, std::uint64_t seed,
                              int round, std::vector<Eigen::Index>& byz_positions,
                              std::vector<Eigen::Index>* client_of_pos) {
  const Eigen::Index nh = honest.rows();
  const Eigen::Index nb = byz.rows();
  const Eigen::Index n = nh + nb;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, kStreamShuffle, static_cast<std::uint64_t>(round)));
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  GradientMatrix G;
  G.data.resize(n, honest.cols());
  byz_positions.clear();
  if (client_of_pos) client_of_pos->assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    const Eigen::Index src = perm[static_cast<std::size_t>(pos)];
    if (client_of_pos) (*client_of_pos)[static_cast<std::size_t>(pos)] = src;
    if (src < nh) {
      G.data.row(pos) = honest.row(src);
    } else {
      G.data.row(pos) = byz.row(src - nh);
      byz_positions.push_back(pos);
    }
  }
  return G;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const Eigen::Index n_honest = cfg.n - cfg.f_count;
  HonestModel model(cfg.task, cfg.d, n_honest, cfg.sigma, cfg.sigma_het, cfg.seed);

  std::unique_ptr<Ledger> ledger;
  if (cfg.use_ledger) {
    Ledger::Options lopt;
    lopt.keep_rounds = cfg.ledger_keep_rounds;
    const std::filesystem::path ldir =
        cfg.ledger_dir.empty() ? std::filesystem::path("ledger") : std::filesystem::path(cfg.ledger_dir);
    ledger = std::make_unique<Ledger>(ldir, lopt);
    std::vector<std::string> addrs;
    std::vector<std::uint64_t> ids;
    for (Eigen::Index i = 0; i < cfg.n; ++i) {
      addrs.push_back("client-" + std::to_string(i));
      ids.push_back(static_cast<std::uint64_t>(i));
    }
    ledger->register_batch(addrs, ids);
  }

  Vector w = Vector::Zero(cfg.d);
  // Stale iterates for async delays: history[s] is the iterate s rounds back.
  std::deque<Vector> history;
  // Clients dropped by the most recent screening (detection_period > 1).
  std::vector<bool> banned(static_cast<std::size_t>(cfg.n), false);

  RunResult res;
  res.min_grad_norm2 = std::numeric_limits<double>::infinity();
  double recall_sum = 0.0, precision_sum = 0.0;
  int detect_rounds = 0;

  for (int t = 0; t < cfg.rounds; ++t) {
    history.push_front(w);
    if (static_cast<int>(history.size()) > cfg.tau_max + 1) history.pop_back();

    RoundMetrics m;
    m.round = t;
    m.grad_norm2 = model.true_gradient(w).squaredNorm();
    m.loss = model.loss(w);

    // Honest rows, each possibly evaluated at a stale iterate.
    Matrix honest(n_honest, cfg.d);
    double staleness_sum = 0.0;
    for (Eigen::Index i = 0; i < n_honest; ++i) {
      int delay = 0;
      if (cfg.tau_max > 0) {
        Rng drng(derive_seed(cfg.seed, kStreamDelay, static_cast<std::uint64_t>(t),
                             static_cast<std::uint64_t>(i)));
        delay = static_cast<int>(drng.uniform_int(static_cast<std::uint64_t>(cfg.tau_max)));
        delay = std::min<int>(delay, static_cast<int>(history.size()) - 1);
      }
      staleness_sum += delay;
      Rng grng(derive_seed(cfg.seed, kStreamGrad, static_cast<std::uint64_t>(t - delay),
                           static_cast<std::uint64_t>(i)));
      honest.row(i) = model
                          .client_gradient(i, history[static_cast<std::size_t>(delay)], grng)
                          .transpose();
    }
    m.mean_staleness = n_honest > 0 ? staleness_sum / static_cast<double>(n_honest) : 0.0;

    if (cfg.dp) {
      // Honest clients apply the local DP mechanism; rational attackers skip
      // it to keep their perturbation budget (their rows come from the
      // attack generator untouched).
      Rng dprng(derive_seed(cfg.seed, kStreamDp, static_cast<std::uint64_t>(t)));
      honest = dp_inject(honest, cfg.dp->epsilon, cfg.dp->clip, dprng);
    }

    Matrix byz(0, cfg.d);
    if (cfg.f_count > 0) {
      AttackContext ctx;
      ctx.honest = honest;
      ctx.f_count = cfg.f_count;
      ctx.round = t;
      ctx.seed = derive_seed(cfg.seed, kStreamAttack);
      if (cfg.attack.kind == AttackKind::AdaptiveSpectral ||
          cfg.attack.kind == AttackKind::NashAdversary)
        ctx.detector = cfg.detector;
      byz = generate_attack(cfg.attack, ctx);
    }

    std::vector<Eigen::Index> byz_positions;
    std::vector<Eigen::Index> client_of_pos;
    GradientMatrix G = assemble_round(honest, byz, cfg.seed, t, byz_positions, &client_of_pos);

    if (ledger) {
      const std::uint64_t round_id = ledger->start_round();
      for (Eigen::Index i = 0; i < cfg.n; ++i) {
        std::vector<double> grad(static_cast<std::size_t>(cfg.d));
        for (Eigen::Index j = 0; j < cfg.d; ++j) grad[static_cast<std::size_t>(j)] = G.data(i, j);
        auto bytes = canonical_update_bytes(round_id, static_cast<std::uint64_t>(i), grad);
        ledger->submit_update(static_cast<std::uint64_t>(i), commit_hash(bytes));
        ledger->store_blob(round_id, static_cast<std::uint64_t>(i), bytes);
        ledger->advance_tick();
      }
    }

    const bool detection_round = (t % cfg.detector.detection_period) == 0;
    Vector agg;
    DetectionReport report;
    bool have_report = false;
    try {
      if (cfg.aggregator == "sentinel" && !detection_round) {
        // Between screenings, reuse the last decision by client identity.
        Vector sum = Vector::Zero(cfg.d);
        Eigen::Index kept = 0;
        for (Eigen::Index pos = 0; pos < cfg.n; ++pos) {
          if (banned[static_cast<std::size_t>(client_of_pos[static_cast<std::size_t>(pos)])])
            continue;
          sum += G.data.row(pos).transpose();
          ++kept;
        }
        agg = kept > 0 ? Vector(sum / static_cast<double>(kept)) : coordinate_median(G);
      } else if (cfg.aggregator == "sentinel") {
        SentinelResult sr = sentinel_aggregate(G, cfg.detector);
        agg = sr.aggregate;
        report = std::move(sr.report);
        have_report = true;
        std::fill(banned.begin(), banned.end(), false);
        for (Eigen::Index pos : report.flagged)
          banned[static_cast<std::size_t>(client_of_pos[static_cast<std::size_t>(pos)])] = true;
      } else {
        agg = make_aggregator(cfg.aggregator, cfg.f_count, cfg.trim_beta, cfg.detector)(G);
        if (cfg.record_detection && detection_round) {
          report = detect(G, cfg.detector);
          have_report = true;
        }
      }
    } catch (const Error&) {
      m.failed = true;  // round skipped, state unchanged
      res.rounds.push_back(std::move(m));
      continue;
    }

    if (have_report && cfg.record_detection) {
      m.detection_ran = true;
      m.flagged = report.flagged;
      m.regime = report.regime;
      std::vector<bool> is_byz(static_cast<std::size_t>(cfg.n), false);
      for (Eigen::Index p : byz_positions) is_byz[static_cast<std::size_t>(p)] = true;
      int tp = 0;
      for (Eigen::Index p : report.flagged)
        if (is_byz[static_cast<std::size_t>(p)]) ++tp;
      m.precision = report.flagged.empty()
                        ? 1.0
                        : static_cast<double>(tp) / static_cast<double>(report.flagged.size());
      m.recall = byz_positions.empty()
                     ? 1.0
                     : static_cast<double>(tp) / static_cast<double>(byz_positions.size());
      recall_sum += m.recall;
      precision_sum += m.precision;
      ++detect_rounds;
    }

    m.agg_error2 = (agg - honest.colwise().mean().transpose()).squaredNorm();

    if (ledger) {
      std::vector<double> av(agg.data(), agg.data() + cfg.d);
      ledger->finalize_round(commit_hash(canonical_update_bytes(
          static_cast<std::uint64_t>(t), std::numeric_limits<std::uint64_t>::max(), av)));
      ledger->advance_tick();
    }

    w -= cfg.eta * agg;
    res.min_grad_norm2 = std::min(res.min_grad_norm2, m.grad_norm2);
    res.rounds.push_back(std::move(m));
  }

  res.final_w = w;
  res.final_grad_norm2 = model.true_gradient(w).squaredNorm();
  if (res.min_grad_norm2 == std::numeric_limits<double>::infinity()) res.min_grad_norm2 = 0.0;
  res.mean_recall = detect_rounds > 0 ? recall_sum / detect_rounds : 0.0;
  res.mean_precision = detect_rounds > 0 ? precision_sum / detect_rounds : 0.0;
  return res;
}

}  // namespace sentinel
