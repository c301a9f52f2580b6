#include "sentinel/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <nlohmann/json.hpp>
#include <thread>

#include "sentinel/sha256.hpp"

namespace sentinel {

using nlohmann::json;

namespace {

enum : std::uint64_t {
  kStreamMu = 0x21,
  kStreamHonest = 0x22,
  kStreamByz = 0x23,
  kStreamDir = 0x24,
  kStreamCalib = 0x25,
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double wall_ms(const std::function<void()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

}  // namespace

void parallel_for(int n_items, int threads, const std::function<void(int)>& fn) {
  if (n_items <= 0) return;
  const int workers = std::max(1, std::min(threads, n_items));
  if (workers == 1) {
    for (int i = 0; i < n_items; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  std::atomic<bool> failed{false};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_items || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          failed.store(true);
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failed.load()) fail(ErrorCode::NumericalFailure, "a parallel task threw");
}

CalibrationResult calibrate_tau(Eigen::Index n, Eigen::Index d, int draws, std::uint64_t seed,
                                double f_max, Eigen::Index sketch_size, int threads) {
  if (n < 4 || d < 1) fail(ErrorCode::InvalidInput, "calibration needs n >= 4, d >= 1");
  CalibrationResult out;
  out.draws = draws;
  if (draws < 100) {
    out.fallback = true;
    out.tau_ks = ks_fallback_threshold(static_cast<std::size_t>(n));
    out.raw_quantile = out.tau_ks;
    return out;
  }
  DetectorConfig det;
  det.f_max = f_max;
  det.sketch_size = sketch_size;
  det.tau_ks = 1e9;  // statistic only; never reject during calibration

  std::vector<double> stats(static_cast<std::size_t>(draws));
  parallel_for(draws, threads, [&](int i) {
    Rng rng(derive_seed(seed, kStreamCalib, static_cast<std::uint64_t>(i)));
    GradientMatrix G;
    G.data.resize(n, d);
    for (Eigen::Index r = 0; r < n; ++r)
      for (Eigen::Index c = 0; c < d; ++c) G.data(r, c) = rng.gaussian();
    stats[static_cast<std::size_t>(i)] = detect(G, det).ks.statistic;
  });
  std::sort(stats.begin(), stats.end());
  const std::size_t idx = static_cast<std::size_t>(std::ceil(0.95 * draws)) - 1;
  out.raw_quantile = stats[std::min(idx, stats.size() - 1)];
  out.tau_ks = 1.1 * out.raw_quantile;
  return out;
}

TrialResult detection_trial(const TrialConfig& cfg) {
  const Eigen::Index nh = cfg.n - cfg.f_count;
  if (nh < 2) fail(ErrorCode::InvalidInput, "trial needs at least two honest clients");

  Rng mu_rng(derive_seed(cfg.seed, kStreamMu));
  Vector mu0(cfg.d);
  for (Eigen::Index j = 0; j < cfg.d; ++j) mu0(j) = mu_rng.gaussian();

  Matrix honest(nh, cfg.d);
  Rng hrng(derive_seed(cfg.seed, kStreamHonest));
  for (Eigen::Index i = 0; i < nh; ++i)
    for (Eigen::Index j = 0; j < cfg.d; ++j) honest(i, j) = mu0(j) + hrng.gaussian(0.0, cfg.sigma);

  Matrix byz(cfg.f_count, cfg.d);
  if (cfg.f_count > 0) {
    if (cfg.gaussian_attack) {
      Rng urng(derive_seed(cfg.seed, kStreamDir));
      Vector u(cfg.d);
      for (Eigen::Index j = 0; j < cfg.d; ++j) u(j) = urng.gaussian();
      u /= std::max(u.norm(), 1e-300);
      Rng brng(derive_seed(cfg.seed, kStreamByz));
      for (Eigen::Index i = 0; i < cfg.f_count; ++i)
        for (Eigen::Index j = 0; j < cfg.d; ++j)
          byz(i, j) = mu0(j) + cfg.shift * u(j) + brng.gaussian(0.0, cfg.sigma);
    } else {
      const Vector flip = -cfg.sign_flip_alpha * honest.colwise().mean().transpose();
      byz.rowwise() = flip.transpose();
    }
  }

  std::vector<Eigen::Index> byz_pos;
  GradientMatrix G = assemble_round(honest, byz, cfg.seed, 0, byz_pos);
  DetectionReport r = detect(G, cfg.detector);

  TrialResult out;
  out.any_flag = r.ks.reject || !r.flagged.empty();
  std::vector<bool> is_byz(static_cast<std::size_t>(cfg.n), false);
  for (Eigen::Index p : byz_pos) is_byz[static_cast<std::size_t>(p)] = true;
  int tp = 0;
  for (Eigen::Index p : r.flagged)
    if (is_byz[static_cast<std::size_t>(p)]) ++tp;
  out.hit = tp > 0;
  out.recall = cfg.f_count > 0 ? static_cast<double>(tp) / static_cast<double>(cfg.f_count) : 0.0;
  out.precision =
      r.flagged.empty() ? 1.0 : static_cast<double>(tp) / static_cast<double>(r.flagged.size());
  return out;
}

std::vector<SweepRow> phase_sweep(const PhaseSweepConfig& cfg) {
  if (cfg.points.empty()) fail(ErrorCode::InvalidInput, "sweep needs grid points");
  if (!(cfg.f > 0.0 && cfg.f < 0.5)) fail(ErrorCode::InvalidInput, "sweep f must be in (0, 0.5)");
  if (cfg.seeds < 1) fail(ErrorCode::InvalidInput, "sweep needs seeds >= 1");

  DetectorConfig det;
  det.f_max = cfg.f;
  det.tau_ks = cfg.tau_ks > 0.0
                   ? cfg.tau_ks
                   : calibrate_tau(cfg.n, cfg.d, 300, derive_seed(cfg.seed, 0x7A0), cfg.f, 0,
                                   cfg.threads)
                         .tau_ks;

  const auto f_count = static_cast<Eigen::Index>(std::lround(cfg.f * static_cast<double>(cfg.n)));
  std::vector<SweepRow> rows(cfg.points.size());
  for (std::size_t p = 0; p < cfg.points.size(); ++p) {
    const double s2f2 = cfg.points[p];
    const double sigma = std::sqrt(s2f2) / cfg.f;
    std::vector<int> hits(static_cast<std::size_t>(cfg.seeds), 0);
    std::vector<int> fps(static_cast<std::size_t>(cfg.seeds), 0);
    parallel_for(cfg.seeds, cfg.threads, [&](int s) {
      TrialConfig t;
      t.n = cfg.n;
      t.d = cfg.d;
      t.f_count = f_count;
      t.sigma = sigma;
      t.shift = cfg.shift;
      t.detector = det;
      t.gaussian_attack = true;
      t.seed = derive_seed(cfg.seed, 0x7A1, p, static_cast<std::uint64_t>(s));
      hits[static_cast<std::size_t>(s)] = detection_trial(t).hit ? 1 : 0;
      TrialConfig h = t;
      h.f_count = 0;
      h.seed = derive_seed(cfg.seed, 0x7A2, p, static_cast<std::uint64_t>(s));
      fps[static_cast<std::size_t>(s)] = detection_trial(h).any_flag ? 1 : 0;
    });
    SweepRow& row = rows[p];
    row.sigma2f2 = s2f2;
    row.detection_rate =
        std::accumulate(hits.begin(), hits.end(), 0) / static_cast<double>(cfg.seeds);
    row.fpr = std::accumulate(fps.begin(), fps.end(), 0) / static_cast<double>(cfg.seeds);
    row.regime = phase_regime_name(phase_regime(sigma, cfg.f));
  }
  return rows;
}

namespace {

AttackSpec grid_attack_spec(AttackKind kind, const ExperimentConfig& base) {
  AttackSpec s = base.attack;
  s.kind = kind;
  switch (kind) {
    case AttackKind::SignFlip: s.alpha = 10.0; break;
    case AttackKind::IPM: s.epsilon = 2.0; break;
    case AttackKind::FallOfEmpires: s.epsilon = 0.3; break;
    case AttackKind::GaussianNoise: s.sigma_a = 3.0 * std::max(base.sigma, 0.5); break;
    case AttackKind::ModelPoisonSurrogate: s.drift = 0.5; break;
    case AttackKind::BackdoorSurrogate: {
      s.mask.clear();
      s.target.clear();
      const Eigen::Index m = std::min<Eigen::Index>(8, base.d);
      for (Eigen::Index j = 0; j < m; ++j) {
        s.mask.push_back(j);
        s.target.push_back(6.0 * std::max(base.sigma, 0.5));
      }
      break;
    }
    default: break;
  }
  return s;
}

}  // namespace

std::vector<GridCell> attack_grid(const GridConfig& cfg) {
  const std::vector<std::string> attacks = cfg.attacks.empty() ? attack_names() : cfg.attacks;
  const std::vector<std::string> aggs =
      cfg.aggregators.empty() ? aggregator_names() : cfg.aggregators;
  const int n_cells = static_cast<int>(attacks.size() * aggs.size());
  std::vector<GridCell> cells(static_cast<std::size_t>(n_cells));
  parallel_for(n_cells, cfg.threads, [&](int c) {
    const std::size_t ai = static_cast<std::size_t>(c) / aggs.size();
    const std::size_t gi = static_cast<std::size_t>(c) % aggs.size();
    GridCell& cell = cells[static_cast<std::size_t>(c)];
    cell.attack = attacks[ai];
    cell.aggregator = aggs[gi];
    try {
      ExperimentConfig ec = cfg.base;
      ec.attack = grid_attack_spec(attack_kind_from_name(attacks[ai]), cfg.base);
      ec.aggregator = aggs[gi];
      ec.seed = derive_seed(cfg.base.seed, 0x9D1, ai, gi);
      RunResult r = run_experiment(ec);
      cell.final_grad_norm2 = r.final_grad_norm2;
      cell.mean_recall = r.mean_recall;
      cell.mean_precision = r.mean_precision;
    } catch (const Error& e) {
      cell.failed = true;
      cell.error = e.what();
      cell.final_grad_norm2 = std::numeric_limits<double>::infinity();
    }
  });
  return cells;
}

std::vector<AblationRow> ablate_sketch(const std::vector<Eigen::Index>& ks, int seeds,
                                       std::uint64_t seed, int threads) {
  const Eigen::Index n = 256, d = 512, f_count = 32;
  std::vector<AblationRow> rows;
  for (Eigen::Index k : ks) {
    const auto cal = calibrate_tau(n, d, 100, derive_seed(seed, 0xAB1, static_cast<std::uint64_t>(k)),
                                   0.25, k, threads);
    DetectorConfig det;
    det.f_max = 0.25;
    det.sketch_size = k;
    det.tau_ks = cal.tau_ks;
    std::vector<int> hits(static_cast<std::size_t>(seeds), 0);
    std::vector<int> fps(static_cast<std::size_t>(seeds), 0);
    const double ms = wall_ms([&]() {
      parallel_for(seeds, threads, [&](int s) {
        TrialConfig t;
        t.n = n;
        t.d = d;
        t.f_count = f_count;
        t.sigma = 1.0;
        t.shift = 14.0;
        t.detector = det;
        t.seed = derive_seed(seed, 0xAB2, static_cast<std::uint64_t>(k),
                             static_cast<std::uint64_t>(s));
        hits[static_cast<std::size_t>(s)] = detection_trial(t).hit ? 1 : 0;
        TrialConfig h = t;
        h.f_count = 0;
        h.seed = derive_seed(seed, 0xAB3, static_cast<std::uint64_t>(k),
                             static_cast<std::uint64_t>(s));
        fps[static_cast<std::size_t>(s)] = detection_trial(h).any_flag ? 1 : 0;
      });
    });
    AblationRow row;
    row.axis = "sketch_size";
    row.setting = std::to_string(k);
    row.detection_rate = std::accumulate(hits.begin(), hits.end(), 0) / static_cast<double>(seeds);
    row.fpr = std::accumulate(fps.begin(), fps.end(), 0) / static_cast<double>(seeds);
    row.runtime_ms = ms;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> ablate_period(const std::vector<int>& periods, int seeds,
                                       std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (int p : periods) {
    double recall_sum = 0.0;
    double ms_sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
      ExperimentConfig ec;
      ec.task = TaskKind::Quadratic;
      ec.d = 64;
      ec.n = 32;
      ec.f_count = 6;
      ec.rounds = 50;
      ec.eta = 0.05;
      ec.sigma = 0.5;
      ec.sigma_het = 0.2;
      ec.aggregator = "sentinel";
      ec.attack.kind = AttackKind::SignFlip;
      ec.attack.alpha = 10.0;
      ec.detector.f_max = 0.25;
      ec.detector.detection_period = p;
      ec.seed = derive_seed(seed, 0xAB4, static_cast<std::uint64_t>(p),
                            static_cast<std::uint64_t>(s));
      RunResult r;
      ms_sum += wall_ms([&]() { r = run_experiment(ec); });
      recall_sum += r.mean_recall;
    }
    AblationRow row;
    row.axis = "period";
    row.setting = std::to_string(p);
    row.detection_rate = recall_sum / seeds;
    row.runtime_ms = ms_sum / seeds;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<AblationRow> ablate_layerwise(int seeds, std::uint64_t seed) {
  // Attack energy concentrated in one of four layers: layer-wise screening
  // sees the full spike, the full-model pass sees it diluted.
  const Eigen::Index n = 64, layer_d = 64, layers = 4, f_count = 12;
  DetectorConfig det;
  det.f_max = 0.25;
  int full_hits = 0, layer_hits = 0;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(derive_seed(seed, 0xAB5, static_cast<std::uint64_t>(s)));
    const Eigen::Index d = layer_d * layers;
    Matrix honest(n - f_count, d), byz(f_count, d);
    for (Eigen::Index i = 0; i < honest.rows(); ++i)
      for (Eigen::Index j = 0; j < d; ++j) honest(i, j) = rng.gaussian();
    Vector u(layer_d);
    for (Eigen::Index j = 0; j < layer_d; ++j) u(j) = rng.gaussian();
    u /= u.norm();
    for (Eigen::Index i = 0; i < f_count; ++i)
      for (Eigen::Index j = 0; j < d; ++j)
        byz(i, j) = rng.gaussian() + (j < layer_d ? 5.0 * u(j) : 0.0);

    std::vector<Eigen::Index> byz_pos;
    GradientMatrix G = assemble_round(honest, byz, derive_seed(seed, 0xAB6), s, byz_pos);
    std::vector<bool> is_byz(static_cast<std::size_t>(n), false);
    for (Eigen::Index p : byz_pos) is_byz[static_cast<std::size_t>(p)] = true;
    auto any_hit = [&](const std::vector<Eigen::Index>& flagged) {
      for (Eigen::Index p : flagged)
        if (is_byz[static_cast<std::size_t>(p)]) return true;
      return false;
    };
    if (any_hit(detect(G, det).flagged)) ++full_hits;

    LayeredGradients L;
    for (Eigen::Index l = 0; l < layers; ++l) {
      GradientMatrix layer;
      layer.data = G.data.middleCols(l * layer_d, layer_d);
      L.layers.push_back(std::move(layer));
      L.names.push_back("layer" + std::to_string(l));
    }
    if (any_hit(detect_layerwise(L, det).flagged)) ++layer_hits;
  }
  std::vector<AblationRow> rows(2);
  rows[0] = {"layerwise", "full", static_cast<double>(full_hits) / seeds, 0.0, 0.0};
  rows[1] = {"layerwise", "layered", static_cast<double>(layer_hits) / seeds, 0.0, 0.0};
  return rows;
}

std::vector<AblationRow> ablate_thresholds(int seeds, std::uint64_t seed) {
  // Honest stream whose scale drifts over rounds: online thresholds track the
  // accepted-round statistics, offline keeps the asymptotic fallback.
  const Eigen::Index n = 64, d = 256;
  const int rounds = 60;
  int online_fp = 0, offline_fp = 0, total = 0;
  const double fallback = ks_fallback_threshold(static_cast<std::size_t>(n));
  for (int s = 0; s < seeds; ++s) {
    std::vector<KsResult> history;
    for (int t = 0; t < rounds; ++t) {
      const double sigma = 1.0 + 0.5 * std::sin(0.2 * t);
      Rng rng(derive_seed(seed, 0xAB7, static_cast<std::uint64_t>(s),
                          static_cast<std::uint64_t>(t)));
      GradientMatrix G;
      G.data.resize(n, d);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) G.data(i, j) = rng.gaussian(0.0, sigma);

      DetectorConfig det;
      det.f_max = 0.25;
      det.tau_ks = update_thresholds(
          history.empty() ? std::vector<KsResult>{KsResult{fallback, 0, fallback, false}}
                          : history,
          50, fallback);
      DetectionReport online = detect(G, det);
      det.tau_ks = fallback;
      DetectionReport offline = detect(G, det);
      ++total;
      if (online.ks.reject || !online.flagged.empty()) ++online_fp;
      if (offline.ks.reject || !offline.flagged.empty()) ++offline_fp;
      history.push_back(online.ks);
    }
  }
  std::vector<AblationRow> rows(2);
  rows[0] = {"threshold", "online", 0.0, static_cast<double>(online_fp) / total, 0.0};
  rows[1] = {"threshold", "offline", 0.0, static_cast<double>(offline_fp) / total, 0.0};
  return rows;
}

// ---- config & file plumbing ------------------------------------------------

namespace {

const json& require_field(const json& j, const std::string& key) {
  if (!j.contains(key)) fail(ErrorCode::InvalidInput, "missing config field: " + key);
  return j.at(key);
}

AttackSpec attack_spec_from_json(const json& j) {
  AttackSpec s;
  if (j.is_null()) return s;
  const std::string kind = j.value("kind", "sign_flip");
  if (kind != "none") s.kind = attack_kind_from_name(kind);
  s.alpha = j.value("alpha", s.alpha);
  s.z = j.value("z", s.z);
  s.epsilon = j.value("epsilon", s.epsilon);
  s.lambda = j.value("lambda", s.lambda);
  s.sigma_a = j.value("sigma_a", s.sigma_a);
  s.drift = j.value("drift", s.drift);
  if (j.contains("mask")) s.mask = j.at("mask").get<std::vector<Eigen::Index>>();
  if (j.contains("target")) s.target = j.at("target").get<std::vector<double>>();
  return s;
}

DetectorConfig detector_config_from_json(const json& j) {
  DetectorConfig d;
  if (j.is_null()) return d;
  d.sketch_size = j.value("sketch_size", d.sketch_size);
  d.tau_ks = j.value("tau_ks", d.tau_ks);
  d.tau_tail = j.value("tau_tail", d.tau_tail);
  d.f_max = j.value("f_max", d.f_max);
  d.layerwise = j.value("layerwise", d.layerwise);
  d.detection_period = j.value("detection_period", d.detection_period);
  d.window = j.value("window", d.window);
  return d;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const Json& j) {
  ExperimentConfig c;
  c.n = require_field(j, "n").get<Eigen::Index>();
  c.rounds = require_field(j, "rounds").get<int>();
  const std::string task = j.value("task", "quadratic");
  if (task == "quadratic") c.task = TaskKind::Quadratic;
  else if (task == "logistic") c.task = TaskKind::Logistic;
  else fail(ErrorCode::InvalidInput, "bad config field: task");
  c.d = j.value("d", c.d);
  c.f_count = j.value("f_count", Eigen::Index{0});
  c.eta = j.value("eta", c.eta);
  c.sigma = j.value("sigma", c.sigma);
  c.sigma_het = j.value("sigma_het", c.sigma_het);
  c.aggregator = j.value("aggregator", c.aggregator);
  c.trim_beta = j.value("trim_beta", c.trim_beta);
  if (j.contains("attack")) {
    c.attack = attack_spec_from_json(j.at("attack"));
    if (j.at("attack").value("kind", "") == "none") c.f_count = 0;
  }
  if (j.contains("detector")) c.detector = detector_config_from_json(j.at("detector"));
  c.tau_max = j.value("tau_max", c.tau_max);
  if (j.contains("dp") && !j.at("dp").is_null()) {
    DpOptions dp;
    dp.epsilon = j.at("dp").value("epsilon", dp.epsilon);
    dp.clip = j.at("dp").value("clip", dp.clip);
    c.dp = dp;
  }
  c.seed = j.value("seed", c.seed);
  c.record_detection = j.value("record_detection", c.record_detection);
  c.use_ledger = j.value("use_ledger", c.use_ledger);
  c.ledger_dir = j.value("ledger_dir", c.ledger_dir);
  c.ledger_keep_rounds = j.value("ledger_keep_rounds", c.ledger_keep_rounds);
  c.validate();
  return c;
}

Json experiment_config_to_json(const ExperimentConfig& c) {
  json a{{"kind", attack_kind_name(c.attack.kind)}, {"alpha", c.attack.alpha},
         {"z", c.attack.z},       {"epsilon", c.attack.epsilon},
         {"lambda", c.attack.lambda}, {"sigma_a", c.attack.sigma_a},
         {"drift", c.attack.drift}};
  if (!c.attack.mask.empty()) {
    a["mask"] = c.attack.mask;
    a["target"] = c.attack.target;
  }
  json det{{"sketch_size", c.detector.sketch_size}, {"tau_ks", c.detector.tau_ks},
           {"tau_tail", c.detector.tau_tail},       {"f_max", c.detector.f_max},
           {"layerwise", c.detector.layerwise},
           {"detection_period", c.detector.detection_period},
           {"window", c.detector.window}};
  json out{{"task", c.task == TaskKind::Quadratic ? "quadratic" : "logistic"},
           {"d", c.d},
           {"n", c.n},
           {"f_count", c.f_count},
           {"rounds", c.rounds},
           {"eta", c.eta},
           {"sigma", c.sigma},
           {"sigma_het", c.sigma_het},
           {"aggregator", c.aggregator},
           {"trim_beta", c.trim_beta},
           {"attack", a},
           {"detector", det},
           {"tau_max", c.tau_max},
           {"seed", c.seed},
           {"record_detection", c.record_detection},
           {"use_ledger", c.use_ledger}};
  if (c.dp) out["dp"] = json{{"epsilon", c.dp->epsilon}, {"clip", c.dp->clip}};
  return out;
}

std::string config_digest(const Json& config) {
  const std::string canon = config.dump();  // nlohmann sorts object keys
  return hash_hex(sha256(std::vector<std::uint8_t>(canon.begin(), canon.end())));
}

void write_csv(const std::filesystem::path& path, const std::string& schema,
               const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::ofstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  f << "# schema: " << schema << "\n";
  for (std::size_t i = 0; i < header.size(); ++i) f << (i ? "," : "") << header[i];
  f << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
}

void write_manifest(const std::filesystem::path& path, const Json& config, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  json m{{"artifact_version", "1"},
         {"config", config},
         {"config_sha256", config_digest(config)},
         {"seed", seed},
         {"outputs", outputs}};
  std::ofstream f(path);
  if (!f) fail(ErrorCode::IoError, "cannot write " + path.string());
  f << m.dump(2) << "\n";
}

CommandOutputs cmd_run(const Json& config, const std::filesystem::path& out_dir,
                       std::optional<std::uint64_t> seed_override, int /*threads*/) {
  ExperimentConfig ec = experiment_config_from_json(config);
  if (seed_override) ec.seed = *seed_override;
  std::filesystem::create_directories(out_dir);
  RunResult r = run_experiment(ec);

  std::vector<std::vector<std::string>> rows;
  for (const auto& m : r.rounds) {
    rows.push_back({std::to_string(m.round), fmt_double(m.grad_norm2), fmt_double(m.agg_error2),
                    fmt_double(m.loss), fmt_double(m.precision), fmt_double(m.recall),
                    std::to_string(m.flagged.size()), phase_regime_name(m.regime),
                    fmt_double(m.mean_staleness), m.failed ? "1" : "0"});
  }
  write_csv(out_dir / "metrics.csv", "run-metrics-v1",
            {"round", "grad_norm2", "agg_error2", "loss", "precision", "recall", "n_flagged",
             "regime", "mean_staleness", "failed"},
            rows);

  int failed_rounds = 0;
  for (const auto& m : r.rounds) failed_rounds += m.failed ? 1 : 0;
  json summary{{"final_grad_norm2", r.final_grad_norm2},
               {"min_grad_norm2", r.min_grad_norm2},
               {"mean_recall", r.mean_recall},
               {"mean_precision", r.mean_precision},
               {"rounds", static_cast<int>(r.rounds.size())},
               {"failed_rounds", failed_rounds}};
  {
    std::ofstream f(out_dir / "summary.json");
    if (!f) fail(ErrorCode::IoError, "cannot write summary.json");
    f << summary.dump(2) << "\n";
  }
  write_manifest(out_dir / "manifest.json", experiment_config_to_json(ec), ec.seed,
                 {"metrics.csv", "summary.json"});
  CommandOutputs out;
  out.files = {(out_dir / "metrics.csv").string(), (out_dir / "summary.json").string(),
               (out_dir / "manifest.json").string()};
  out.summary = summary;
  return out;
}

CommandOutputs cmd_sweep(const Json& config, const std::filesystem::path& out_dir,
                         std::optional<std::uint64_t> seed_override, int threads) {
  const json& sj = require_field(config, "sweep");
  PhaseSweepConfig sc;
  sc.n = sj.value("n", sc.n);
  sc.d = sj.value("d", sc.d);
  sc.f = sj.value("f", sc.f);
  sc.points = require_field(sj, "points").get<std::vector<double>>();
  sc.seeds = sj.value("seeds", sc.seeds);
  sc.shift = sj.value("shift", sc.shift);
  sc.tau_ks = sj.value("tau_ks", sc.tau_ks);
  sc.seed = sj.value("seed", sc.seed);
  if (seed_override) sc.seed = *seed_override;
  sc.threads = threads;

  std::filesystem::create_directories(out_dir);
  auto rows = phase_sweep(sc);
  std::vector<std::vector<std::string>> csv;
  for (const auto& r : rows)
    csv.push_back(
        {fmt_double(r.sigma2f2), fmt_double(r.detection_rate), fmt_double(r.fpr), r.regime});
  write_csv(out_dir / "sweep.csv", "phase-sweep-v1",
            {"sigma2f2", "detection_rate", "fpr", "regime"}, csv);
  json summary{{"points", rows.size()},
               {"first_rate", rows.front().detection_rate},
               {"last_rate", rows.back().detection_rate}};
  write_manifest(out_dir / "manifest.json", config, sc.seed, {"sweep.csv"});
  CommandOutputs out;
  out.files = {(out_dir / "sweep.csv").string(), (out_dir / "manifest.json").string()};
  out.summary = summary;
  return out;
}

CommandOutputs cmd_grid(const Json& config, const std::filesystem::path& out_dir,
                        std::optional<std::uint64_t> seed_override, int threads) {
  GridConfig gc;
  gc.base = experiment_config_from_json(require_field(config, "base"));
  if (seed_override) gc.base.seed = *seed_override;
  if (config.contains("attacks")) gc.attacks = config.at("attacks").get<std::vector<std::string>>();
  if (config.contains("aggregators"))
    gc.aggregators = config.at("aggregators").get<std::vector<std::string>>();
  gc.threads = threads;

  std::filesystem::create_directories(out_dir);
  auto cells = attack_grid(gc);
  std::vector<std::vector<std::string>> csv;
  int failed = 0;
  for (const auto& c : cells) {
    csv.push_back({c.attack, c.aggregator, fmt_double(c.final_grad_norm2),
                   fmt_double(c.mean_recall), fmt_double(c.mean_precision),
                   c.failed ? "1" : "0"});
    failed += c.failed ? 1 : 0;
  }
  write_csv(out_dir / "grid.csv", "attack-grid-v1",
            {"attack", "aggregator", "final_grad_norm2", "mean_recall", "mean_precision",
             "failed"},
            csv);
  json summary{{"cells", cells.size()}, {"failed_cells", failed}};
  write_manifest(out_dir / "manifest.json", config, gc.base.seed, {"grid.csv"});
  CommandOutputs out;
  out.files = {(out_dir / "grid.csv").string(), (out_dir / "manifest.json").string()};
  out.summary = summary;
  if (failed > 0) out.summary["partial_failure"] = true;
  return out;
}

CommandOutputs cmd_ablate(const std::string& kind, const std::filesystem::path& out_dir,
                          std::uint64_t seed, int threads) {
  std::filesystem::create_directories(out_dir);
  std::vector<AblationRow> rows;
  if (kind == "sketch")
    rows = ablate_sketch({64, 128, 256, 512}, 40, seed, threads);
  else if (kind == "period")
    rows = ablate_period({1, 5}, 3, seed);
  else if (kind == "layerwise")
    rows = ablate_layerwise(40, seed);
  else if (kind == "thresholds")
    rows = ablate_thresholds(5, seed);
  else
    fail(ErrorCode::InvalidInput, "unknown ablation kind: " + kind);

  std::vector<std::vector<std::string>> csv;
  for (const auto& r : rows)
    csv.push_back({r.axis, r.setting, fmt_double(r.detection_rate), fmt_double(r.fpr),
                   fmt_double(r.runtime_ms)});
  const auto path = out_dir / ("ablate_" + kind + ".csv");
  write_csv(path, "ablation-v1", {"axis", "setting", "detection_rate", "fpr", "runtime_ms"}, csv);
  write_manifest(out_dir / "manifest.json", json{{"ablate", kind}}, seed,
                 {path.filename().string()});
  CommandOutputs out;
  out.files = {path.string(), (out_dir / "manifest.json").string()};
  out.summary = json{{"rows", rows.size()}};
  return out;
}

CommandOutputs cmd_calibrate(Eigen::Index n, Eigen::Index d, int draws,
                             const std::filesystem::path& out_dir, std::uint64_t seed,
                             int threads) {
  std::filesystem::create_directories(out_dir);
  CalibrationResult cal = calibrate_tau(n, d, draws, seed, 0.49, 0, threads);
  json summary{{"tau_ks", cal.tau_ks},
               {"raw_quantile", cal.raw_quantile},
               {"draws", cal.draws},
               {"fallback", cal.fallback},
               {"n", n},
               {"d", d}};
  {
    std::ofstream f(out_dir / "calibration.json");
    if (!f) fail(ErrorCode::IoError, "cannot write calibration.json");
    f << summary.dump(2) << "\n";
  }
  write_manifest(out_dir / "manifest.json", json{{"calibrate", {{"n", n}, {"d", d}, {"draws", draws}}}},
                 seed, {"calibration.json"});
  CommandOutputs out;
  out.files = {(out_dir / "calibration.json").string(), (out_dir / "manifest.json").string()};
  out.summary = summary;
  return out;
}

}  // namespace sentinel
