/* Spectral Sentinel C API.
 *
 * Byzantine-robust gradient aggregation behind a flat shared-library
 * interface: opaque handles, integer status codes, no exceptions across the
 * boundary.  All matrices are row-major double arrays (n rows of d).
 */
#ifndef SPECTRAL_SENTINEL_H
#define SPECTRAL_SENTINEL_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ss_status {
  SS_OK = 0,
  SS_INVALID_INPUT = 1,
  SS_NUMERICAL_FAILURE = 2,
  SS_DEGENERATE_DISTRIBUTION = 3,
  SS_INSUFFICIENT_CLIENTS = 4,
  SS_ALREADY_REGISTERED = 5,
  SS_UNREGISTERED = 6,
  SS_NO_OPEN_ROUND = 7,
  SS_DUPLICATE_SUBMISSION = 8,
  SS_UNKNOWN_ROUND = 9,
  SS_INTEGRITY_ERROR = 10,
  SS_PURGED = 11,
  SS_IO_ERROR = 12,
  SS_UNKNOWN_ERROR = 99
} ss_status;

/* Human-readable message for the most recent failure on this thread. */
const char* ss_last_error(void);
const char* ss_status_name(ss_status s);

/* ---- detector -------------------------------------------------------- */

typedef struct ss_detector ss_detector;
typedef struct ss_report ss_report;

typedef struct ss_detector_config {
  int64_t sketch_size;    /* 0 = full covariance */
  double tau_ks;          /* <= 0 selects the asymptotic fallback */
  double tau_tail;
  double f_max;
  int detection_period;
  int window;
} ss_detector_config;

void ss_detector_config_default(ss_detector_config* cfg);

ss_status ss_detector_create(const ss_detector_config* cfg, ss_detector** out);
void ss_detector_destroy(ss_detector* det);

/* Runs one screening pass over an n x d row-major gradient matrix. */
ss_status ss_detector_detect(ss_detector* det, const double* gradients, int64_t n, int64_t d,
                             ss_report** out);

void ss_report_destroy(ss_report* rep);
double ss_report_ks_statistic(const ss_report* rep);
int ss_report_ks_reject(const ss_report* rep);
double ss_report_sigma2(const ss_report* rep);
/* 0 = Detectable, 1 = Transition, 2 = Undetectable */
int ss_report_regime(const ss_report* rep);
int64_t ss_report_num_flagged(const ss_report* rep);
ss_status ss_report_flagged(const ss_report* rep, int64_t* out, int64_t capacity);

/* Screen-then-average aggregation; writes the d-vector into out. */
ss_status ss_detector_aggregate(ss_detector* det, const double* gradients, int64_t n, int64_t d,
                                double* out, ss_report** report_out /* optional */);

/* ---- baseline aggregators -------------------------------------------- */

/* name: fedavg | coord_median | trimmed_mean | krum | multi_krum |
 *       geometric_median | bulyan */
ss_status ss_aggregate(const char* name, const double* gradients, int64_t n, int64_t d,
                       int64_t f, double beta, double* out);

/* ---- audit ledger ----------------------------------------------------- */

typedef struct ss_ledger ss_ledger;

ss_status ss_ledger_open(const char* root_dir, int keep_rounds, ss_ledger** out);
void ss_ledger_close(ss_ledger* led);
ss_status ss_ledger_register(ss_ledger* led, const char* addr, uint64_t id);
ss_status ss_ledger_start_round(ss_ledger* led, uint64_t* round_out);
/* Commits SHA-256 of the canonical serialization and stores the blob. */
ss_status ss_ledger_submit_gradient(ss_ledger* led, uint64_t round_id, uint64_t client,
                                    const double* gradient, int64_t d);
ss_status ss_ledger_finalize(ss_ledger* led, const double* aggregate, int64_t d);
ss_status ss_ledger_verify_round(ss_ledger* led, uint64_t round_id, int* ok_out);

/* ---- experiment drivers ----------------------------------------------- */

/* config_json: experiment configuration (documented in the README).
 * seed < 0 keeps the config's seed.  Outputs land in out_dir. */
ss_status ss_experiment_run(const char* config_json, const char* out_dir, int64_t seed,
                            int threads);
ss_status ss_experiment_sweep(const char* config_json, const char* out_dir, int64_t seed,
                              int threads);
ss_status ss_experiment_grid(const char* config_json, const char* out_dir, int64_t seed,
                             int threads);
ss_status ss_experiment_ablate(const char* kind, const char* out_dir, uint64_t seed, int threads);
ss_status ss_experiment_calibrate(int64_t n, int64_t d, int draws, const char* out_dir,
                                  uint64_t seed, int threads, double* tau_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* SPECTRAL_SENTINEL_H */
