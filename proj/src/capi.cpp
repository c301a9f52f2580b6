#include "spectral_sentinel.h"

#include <cstring>
#include <nlohmann/json.hpp>
#include <string>

#include "sentinel/aggregators.hpp"
#include "sentinel/experiments.hpp"
#include "sentinel/ledger.hpp"

namespace {

thread_local std::string g_last_error;

ss_status map_code(sentinel::ErrorCode c) {
  using EC = sentinel::ErrorCode;
  switch (c) {
    case EC::Ok: return SS_OK;
    case EC::InvalidInput: return SS_INVALID_INPUT;
    case EC::NumericalFailure: return SS_NUMERICAL_FAILURE;
    case EC::DegenerateDistribution: return SS_DEGENERATE_DISTRIBUTION;
    case EC::InsufficientClients: return SS_INSUFFICIENT_CLIENTS;
    case EC::AlreadyRegistered: return SS_ALREADY_REGISTERED;
    case EC::Unregistered: return SS_UNREGISTERED;
    case EC::NoOpenRound: return SS_NO_OPEN_ROUND;
    case EC::DuplicateSubmission: return SS_DUPLICATE_SUBMISSION;
    case EC::UnknownRound: return SS_UNKNOWN_ROUND;
    case EC::IntegrityError: return SS_INTEGRITY_ERROR;
    case EC::PurgedError: return SS_PURGED;
    case EC::IoError: return SS_IO_ERROR;
  }
  return SS_UNKNOWN_ERROR;
}

template <typename Fn>
ss_status guarded(Fn&& fn) {
  try {
    fn();
    return SS_OK;
  } catch (const sentinel::Error& e) {
    g_last_error = e.what();
    return map_code(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return SS_INVALID_INPUT;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SS_UNKNOWN_ERROR;
  } catch (...) {
    g_last_error = "unknown failure";
    return SS_UNKNOWN_ERROR;
  }
}

sentinel::GradientMatrix to_matrix(const double* data, int64_t n, int64_t d) {
  if (!data || n < 1 || d < 1) sentinel::fail(sentinel::ErrorCode::InvalidInput, "bad matrix args");
  sentinel::GradientMatrix G;
  G.data.resize(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) G.data(i, j) = data[i * d + j];
  return G;
}

}  // namespace

struct ss_detector {
  sentinel::DetectorConfig cfg;
};

struct ss_report {
  sentinel::DetectionReport rep;
};

struct ss_ledger {
  std::unique_ptr<sentinel::Ledger> led;
};

extern "C" {

const char* ss_last_error(void) { return g_last_error.c_str(); }

const char* ss_status_name(ss_status s) {
  switch (s) {
    case SS_OK: return "Ok";
    case SS_INVALID_INPUT: return "InvalidInput";
    case SS_NUMERICAL_FAILURE: return "NumericalFailure";
    case SS_DEGENERATE_DISTRIBUTION: return "DegenerateDistribution";
    case SS_INSUFFICIENT_CLIENTS: return "InsufficientClients";
    case SS_ALREADY_REGISTERED: return "AlreadyRegistered";
    case SS_UNREGISTERED: return "Unregistered";
    case SS_NO_OPEN_ROUND: return "NoOpenRound";
    case SS_DUPLICATE_SUBMISSION: return "DuplicateSubmission";
    case SS_UNKNOWN_ROUND: return "UnknownRound";
    case SS_INTEGRITY_ERROR: return "IntegrityError";
    case SS_PURGED: return "PurgedError";
    case SS_IO_ERROR: return "IoError";
    case SS_UNKNOWN_ERROR: return "UnknownError";
  }
  return "UnknownError";
}

void ss_detector_config_default(ss_detector_config* cfg) {
  if (!cfg) return;
  sentinel::DetectorConfig d;
  cfg->sketch_size = d.sketch_size;
  cfg->tau_ks = d.tau_ks;
  cfg->tau_tail = d.tau_tail;
  cfg->f_max = d.f_max;
  cfg->detection_period = d.detection_period;
  cfg->window = d.window;
}

ss_status ss_detector_create(const ss_detector_config* cfg, ss_detector** out) {
  return guarded([&]() {
    if (!out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null out");
    sentinel::DetectorConfig d;
    if (cfg) {
      d.sketch_size = cfg->sketch_size;
      d.tau_ks = cfg->tau_ks;
      d.tau_tail = cfg->tau_tail;
      d.f_max = cfg->f_max;
      d.detection_period = cfg->detection_period;
      d.window = cfg->window;
    }
    d.validate();
    *out = new ss_detector{d};
  });
}

void ss_detector_destroy(ss_detector* det) { delete det; }

ss_status ss_detector_detect(ss_detector* det, const double* gradients, int64_t n, int64_t d,
                             ss_report** out) {
  return guarded([&]() {
    if (!det || !out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null handle");
    auto G = to_matrix(gradients, n, d);
    *out = new ss_report{sentinel::detect(G, det->cfg)};
  });
}

void ss_report_destroy(ss_report* rep) { delete rep; }

double ss_report_ks_statistic(const ss_report* rep) { return rep ? rep->rep.ks.statistic : 0.0; }
int ss_report_ks_reject(const ss_report* rep) { return rep && rep->rep.ks.reject ? 1 : 0; }
double ss_report_sigma2(const ss_report* rep) { return rep ? rep->rep.sigma2 : 0.0; }
int ss_report_regime(const ss_report* rep) {
  return rep ? static_cast<int>(rep->rep.regime) : 0;
}
int64_t ss_report_num_flagged(const ss_report* rep) {
  return rep ? static_cast<int64_t>(rep->rep.flagged.size()) : 0;
}

ss_status ss_report_flagged(const ss_report* rep, int64_t* out, int64_t capacity) {
  return guarded([&]() {
    if (!rep || !out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null handle");
    if (capacity < static_cast<int64_t>(rep->rep.flagged.size()))
      sentinel::fail(sentinel::ErrorCode::InvalidInput, "flagged buffer too small");
    for (std::size_t i = 0; i < rep->rep.flagged.size(); ++i)
      out[i] = static_cast<int64_t>(rep->rep.flagged[i]);
  });
}

ss_status ss_detector_aggregate(ss_detector* det, const double* gradients, int64_t n, int64_t d,
                                double* out, ss_report** report_out) {
  return guarded([&]() {
    if (!det || !out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null handle");
    auto G = to_matrix(gradients, n, d);
    sentinel::SentinelResult r = sentinel::sentinel_aggregate(G, det->cfg);
    for (int64_t j = 0; j < d; ++j) out[j] = r.aggregate(j);
    if (report_out) *report_out = new ss_report{std::move(r.report)};
  });
}

ss_status ss_aggregate(const char* name, const double* gradients, int64_t n, int64_t d, int64_t f,
                       double beta, double* out) {
  return guarded([&]() {
    if (!name || !out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto G = to_matrix(gradients, n, d);
    sentinel::DetectorConfig cfg;
    auto agg = sentinel::make_aggregator(name, f, beta, cfg);
    sentinel::Vector v = agg(G);
    for (int64_t j = 0; j < d; ++j) out[j] = v(j);
  });
}

ss_status ss_ledger_open(const char* root_dir, int keep_rounds, ss_ledger** out) {
  return guarded([&]() {
    if (!root_dir || !out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    sentinel::Ledger::Options opt;
    opt.keep_rounds = keep_rounds;
    *out = new ss_ledger{std::make_unique<sentinel::Ledger>(root_dir, opt)};
  });
}

void ss_ledger_close(ss_ledger* led) { delete led; }

ss_status ss_ledger_register(ss_ledger* led, const char* addr, uint64_t id) {
  return guarded([&]() {
    if (!led || !addr) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    led->led->register_client(addr, id);
  });
}

ss_status ss_ledger_start_round(ss_ledger* led, uint64_t* round_out) {
  return guarded([&]() {
    if (!led || !round_out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    *round_out = led->led->start_round();
  });
}

ss_status ss_ledger_submit_gradient(ss_ledger* led, uint64_t round_id, uint64_t client,
                                    const double* gradient, int64_t d) {
  return guarded([&]() {
    if (!led || !gradient || d < 1) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    std::vector<double> g(gradient, gradient + d);
    auto bytes = sentinel::canonical_update_bytes(round_id, client, g);
    led->led->submit_update(client, sentinel::commit_hash(bytes));
    led->led->store_blob(round_id, client, bytes);
    led->led->advance_tick();
  });
}

ss_status ss_ledger_finalize(ss_ledger* led, const double* aggregate, int64_t d) {
  return guarded([&]() {
    if (!led || !aggregate || d < 1) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto round = led->led->current_round();
    if (!round) sentinel::fail(sentinel::ErrorCode::NoOpenRound, "no open round");
    std::vector<double> g(aggregate, aggregate + d);
    led->led->finalize_round(sentinel::commit_hash(
        sentinel::canonical_update_bytes(*round, UINT64_MAX, g)));
    led->led->advance_tick();
  });
}

ss_status ss_ledger_verify_round(ss_ledger* led, uint64_t round_id, int* ok_out) {
  return guarded([&]() {
    if (!led || !ok_out) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto rec = led->led->get_round_info(round_id);
    *ok_out = 1;
    for (const auto& [client, hash] : rec.submissions) {
      auto bytes = led->led->load_blob(round_id, client);
      if (!sentinel::verify_commitment(bytes, hash)) {
        *ok_out = 0;
        return;
      }
    }
  });
}

ss_status ss_experiment_run(const char* config_json, const char* out_dir, int64_t seed,
                            int threads) {
  return guarded([&]() {
    if (!config_json || !out_dir) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto cfg = nlohmann::json::parse(config_json);
    std::optional<std::uint64_t> s;
    if (seed >= 0) s = static_cast<std::uint64_t>(seed);
    sentinel::cmd_run(cfg, out_dir, s, threads);
  });
}

ss_status ss_experiment_sweep(const char* config_json, const char* out_dir, int64_t seed,
                              int threads) {
  return guarded([&]() {
    if (!config_json || !out_dir) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto cfg = nlohmann::json::parse(config_json);
    std::optional<std::uint64_t> s;
    if (seed >= 0) s = static_cast<std::uint64_t>(seed);
    sentinel::cmd_sweep(cfg, out_dir, s, threads);
  });
}

ss_status ss_experiment_grid(const char* config_json, const char* out_dir, int64_t seed,
                             int threads) {
  return guarded([&]() {
    if (!config_json || !out_dir) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto cfg = nlohmann::json::parse(config_json);
    std::optional<std::uint64_t> s;
    if (seed >= 0) s = static_cast<std::uint64_t>(seed);
    sentinel::cmd_grid(cfg, out_dir, s, threads);
  });
}

ss_status ss_experiment_ablate(const char* kind, const char* out_dir, uint64_t seed, int threads) {
  return guarded([&]() {
    if (!kind || !out_dir) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    sentinel::cmd_ablate(kind, out_dir, seed, threads);
  });
}

ss_status ss_experiment_calibrate(int64_t n, int64_t d, int draws, const char* out_dir,
                                  uint64_t seed, int threads, double* tau_out) {
  return guarded([&]() {
    if (!out_dir) sentinel::fail(sentinel::ErrorCode::InvalidInput, "null arg");
    auto out = sentinel::cmd_calibrate(n, d, draws, out_dir, seed, threads);
    if (tau_out) *tau_out = out.summary.at("tau_ks").get<double>();
  });
}

}  // extern "C"
