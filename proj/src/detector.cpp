#include "sentinel/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel {

namespace {

constexpr double kScoreEps = 1e-12;

// Shared elbow rule: flag everything above the largest gap in the sorted
// scores, require the weakest flagged score to clear 3x the median of the
// rest, cap the set size.  Ties break toward the lower client index.
std::vector<Eigen::Index> flag_by_elbow(const std::vector<double>& scores, std::size_t cap) {
  const std::size_t n = scores.size();
  if (cap == 0 || n < 2) return {};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::size_t best_cut = 0;  // number of flagged clients
  double best_gap = 0.0;
  const std::size_t max_cut = std::min(cap, n - 1);
  for (std::size_t c = 1; c <= max_cut; ++c) {
    const double gap = scores[order[c - 1]] - scores[order[c]];
    if (gap > best_gap) {
      best_gap = gap;
      best_cut = c;
    }
  }
  if (best_cut == 0 || best_gap <= 0.0) return {};

  // Significance guard: the weakest flagged score must clear the unflagged
  // scores by 3 MADs.  A ratio test fails when heavy contamination biases the
  // median centering and lifts every score toward 1.
  std::vector<double> rest;
  for (std::size_t c = best_cut; c < n; ++c) rest.push_back(scores[order[c]]);
  std::nth_element(rest.begin(), rest.begin() + rest.size() / 2, rest.end());
  const double rest_median = rest[rest.size() / 2];
  std::vector<double> dev;
  dev.reserve(rest.size());
  for (double v : rest) dev.push_back(std::abs(v - rest_median));
  std::nth_element(dev.begin(), dev.begin() + dev.size() / 2, dev.end());
  const double mad = dev[dev.size() / 2];
  const double weakest = scores[order[best_cut - 1]];
  if (weakest <= rest_median + 3.0 * mad) return {};

  std::vector<Eigen::Index> flagged;
  for (std::size_t c = 0; c < best_cut; ++c) flagged.push_back(static_cast<Eigen::Index>(order[c]));
  std::sort(flagged.begin(), flagged.end());
  return flagged;
}

std::vector<double> projection_scores(const Matrix& centered, const Matrix& directions) {
  const Eigen::Index n = centered.rows();
  Matrix proj = centered * directions;  // n x |A|
  std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = centered.row(i).squaredNorm() + kScoreEps;
    scores[static_cast<std::size_t>(i)] = proj.row(i).squaredNorm() / denom;
  }
  return scores;
}

struct SpectrumFit {
  Spectrum spec;
  MpParams params{1.0, 1.0};
  KsResult ks;
};

// Detection-side spectrum convention: eigenvalues of (1/d) Gc Gc^T, one per
// client row, so the bulk follows MP(gamma = n/d, sigma2) with the printed
// density and a (1 - 1/gamma) zero mass when n > d.
SpectrumFit fit_spectrum(const Spectrum& det_spec, Eigen::Index n, Eigen::Index d,
                         double f_max, double tau_ks) {
  SpectrumFit out;
  out.spec = det_spec;
  out.params = estimate_mp_params(det_spec, n, d, f_max);
  const double tau = tau_ks > 0.0 ? tau_ks : ks_fallback_threshold(det_spec.size());
  out.ks = ks_statistic(det_spec, out.params, tau);
  return out;
}

double loo_ks(const Matrix& centered, const std::vector<Eigen::Index>& keep, Eigen::Index d,
              double f_max, double tau) {
  Matrix sub(static_cast<Eigen::Index>(keep.size()), centered.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = centered.row(keep[r]);
  Spectrum spec = gram_spectrum(sub, d);
  MpParams params = estimate_mp_params(spec, sub.rows(), d, f_max);
  return ks_statistic(spec, params, tau).statistic;
}

}  // namespace

void DetectorConfig::validate() const {
  if (!(f_max >= 0.0 && f_max < 0.5)) fail(ErrorCode::InvalidInput, "f_max must be in [0, 0.5)");
  if (detection_period < 1) fail(ErrorCode::InvalidInput, "detection_period must be >= 1");
  if (window < 1) fail(ErrorCode::InvalidInput, "window must be >= 1");
  if (sketch_size < 0) fail(ErrorCode::InvalidInput, "sketch_size must be >= 0");
  if (sketch_size == 1) fail(ErrorCode::InvalidInput, "sketch_size must be >= 2");
}

const char* phase_regime_name(PhaseRegime r) {
  switch (r) {
    case PhaseRegime::Detectable: return "Detectable";
    case PhaseRegime::Transition: return "Transition";
    case PhaseRegime::Undetectable: return "Undetectable";
  }
  return "Unknown";
}

PhaseRegime phase_regime(double sigma_hat, double f, double* sigma2_f2_out) {
  if (sigma_hat < 0.0 || f < 0.0 || f >= 0.5) fail(ErrorCode::InvalidInput, "bad regime inputs");
  const double s2f2 = sigma_hat * sigma_hat * f * f;
  if (sigma2_f2_out) *sigma2_f2_out = s2f2;
  if (s2f2 < 0.20) return PhaseRegime::Detectable;
  if (s2f2 < 0.25) return PhaseRegime::Transition;
  return PhaseRegime::Undetectable;
}

std::vector<Eigen::Index> identify_byzantine(const Matrix& centered, const Spectrum& spec,
                                             const std::vector<std::size_t>& anomalies,
                                             std::size_t cap, const DetectorConfig& cfg) {
  const Eigen::Index n = centered.rows();
  const Eigen::Index d = centered.cols();
  if (cap == 0) return {};

  if (!anomalies.empty()) {
    // Projection-energy scoring against the anomalous eigendirections.
    const double inv_d = 1.0 / static_cast<double>(d);
    EigSym eig = eig_sym(inv_d * (centered * centered.transpose()));
    std::vector<double> scores(static_cast<std::size_t>(n), 0.0);
    for (std::size_t a : anomalies) {
      if (a >= static_cast<std::size_t>(n)) continue;
      const double lam = eig.eigenvalues(static_cast<Eigen::Index>(a));
      if (lam <= 0.0) continue;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = eig.eigenvectors(i, static_cast<Eigen::Index>(a));
        scores[static_cast<std::size_t>(i)] += static_cast<double>(d) * lam * u * u;
      }
    }
    for (Eigen::Index i = 0; i < n; ++i)
      scores[static_cast<std::size_t>(i)] /= centered.row(i).squaredNorm() + kScoreEps;
    return flag_by_elbow(scores, cap);
  }

  // KS-only rejection: greedy leave-one-out improvement.
  const double tau = cfg.tau_ks > 0.0 ? cfg.tau_ks : ks_fallback_threshold(spec.size());
  std::vector<Eigen::Index> active(static_cast<std::size_t>(n));
  std::iota(active.begin(), active.end(), 0);
  std::vector<Eigen::Index> flagged;
  double current = loo_ks(centered, active, d, cfg.f_max, tau);
  while (current > tau && flagged.size() < cap && active.size() > 4) {
    double best = current;
    std::size_t best_pos = active.size();
    for (std::size_t p = 0; p < active.size(); ++p) {
      std::vector<Eigen::Index> keep;
      keep.reserve(active.size() - 1);
      for (std::size_t q = 0; q < active.size(); ++q)
        if (q != p) keep.push_back(active[q]);
      const double d_wo = loo_ks(centered, keep, d, cfg.f_max, tau);
      if (d_wo < best - 1e-12) {
        best = d_wo;
        best_pos = p;
      }
    }
    if (best_pos == active.size()) break;  // no removal helps
    flagged.push_back(active[best_pos]);
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(best_pos));
    current = best;
  }
  std::sort(flagged.begin(), flagged.end());
  return flagged;
}

DetectionReport detect(const GradientMatrix& G, const DetectorConfig& cfg) {
  cfg.validate();
  validate_gradient_matrix(G);
  const Eigen::Index n = G.n();
  const Eigen::Index d = G.d();
  if (n < 4) fail(ErrorCode::InsufficientClients, "detection requires n >= 4");

  DetectionReport report;
  auto all_honest = [&]() {
    report.honest.resize(static_cast<std::size_t>(n));
    std::iota(report.honest.begin(), report.honest.end(), 0);
  };
  if (G.data.isZero(0.0)) {
    report.degenerate = true;
    report.regime = PhaseRegime::Detectable;
    all_honest();
    return report;
  }

  const Matrix centered = center_columns_median(G.data);
  const double gamma = static_cast<double>(n) / static_cast<double>(d);
  const std::size_t cap =
      static_cast<std::size_t>(std::floor(cfg.f_max * static_cast<double>(n)));

  // Lossless sketches short-circuit to the full path so flag sets agree
  // bit-for-bit when k >= n.
  const bool sketched = cfg.sketch_size > 0 && cfg.sketch_size < n;

  Spectrum det_spec;
  std::unique_ptr<FdSketch> sketch;
  if (sketched) {
    sketch = std::make_unique<FdSketch>(cfg.sketch_size, d);
    for (Eigen::Index i = 0; i < n; ++i) sketch->update(centered.row(i).transpose());
    det_spec = sketch->spectrum(n);
    for (double& v : det_spec.eigenvalues) v *= gamma;  // (1/n) -> (1/d) scaling
    det_spec.eigenvalues.resize(static_cast<std::size_t>(n), 0.0);
    det_spec.source_dim = n;
  } else {
    det_spec = gram_spectrum(centered, d);
  }

  // FD zeroes every direction beyond the sketch rank, so fit the MP law to the
  // surviving block with its own aspect ratio instead of the zero-padded tail;
  // otherwise sigma2 collapses and the whole prefix looks anomalous.
  Spectrum fit_spec = det_spec;
  Eigen::Index n_fit = n;
  if (sketched) {
    std::size_t nz = 0;
    for (double v : det_spec.eigenvalues)
      if (v > 0.0) ++nz;
    nz = std::max<std::size_t>(nz, 2);
    fit_spec.eigenvalues.resize(nz);
    fit_spec.source_dim = static_cast<Eigen::Index>(nz);
    n_fit = static_cast<Eigen::Index>(nz);
  }

  SpectrumFit fit;
  try {
    fit = fit_spectrum(fit_spec, n_fit, d, cfg.f_max, cfg.tau_ks);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateDistribution) {
      report.degenerate = true;
      all_honest();
      return report;
    }
    throw;
  }
  report.ks = fit.ks;
  report.sigma2 = fit.params.sigma2;
  report.anomalies = tail_anomalies(fit_spec, fit.params, cfg.tau_tail);
  report.regime = phase_regime(std::sqrt(fit.params.sigma2), cfg.f_max, &report.sigma2_f2);

  if (fit.ks.reject || !report.anomalies.empty()) {
    if (sketched && !report.anomalies.empty()) {
      Matrix dirs = sketch->principal_directions(report.anomalies);
      report.flagged = flag_by_elbow(projection_scores(centered, dirs), cap);
    } else {
      report.flagged = identify_byzantine(centered, det_spec, report.anomalies, cap, cfg);
    }
  }
  std::vector<bool> is_flagged(static_cast<std::size_t>(n), false);
  for (Eigen::Index i : report.flagged) is_flagged[static_cast<std::size_t>(i)] = true;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!is_flagged[static_cast<std::size_t>(i)]) report.honest.push_back(i);
  return report;
}

DetectionReport detect_layerwise(const LayeredGradients& L, const DetectorConfig& cfg) {
  if (L.layers.empty()) fail(ErrorCode::InvalidInput, "no layers");
  const Eigen::Index n = L.layers.front().n();
  for (const auto& layer : L.layers)
    if (layer.n() != n) fail(ErrorCode::InvalidInput, "mismatched client count across layers");
  if (!cfg.layer_sketch_sizes.empty() && cfg.layer_sketch_sizes.size() != L.layers.size())
    fail(ErrorCode::InvalidInput, "layer sketch-size map length mismatch");

  DetectionReport merged;
  std::vector<bool> flagged(static_cast<std::size_t>(n), false);
  double sigma2_weighted = 0.0;
  double total_d = 0.0;
  for (std::size_t l = 0; l < L.layers.size(); ++l) {
    DetectorConfig layer_cfg = cfg;
    layer_cfg.layerwise = false;
    if (!cfg.layer_sketch_sizes.empty()) layer_cfg.sketch_size = cfg.layer_sketch_sizes[l];
    DetectionReport r = detect(L.layers[l], layer_cfg);
    for (Eigen::Index i : r.flagged) flagged[static_cast<std::size_t>(i)] = true;
    if (r.ks.statistic > merged.ks.statistic) merged.ks = r.ks;
    const double dl = static_cast<double>(L.layers[l].d());
    sigma2_weighted += r.sigma2 * dl;
    total_d += dl;
    merged.per_layer.push_back(std::move(r));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (flagged[static_cast<std::size_t>(i)])
      merged.flagged.push_back(i);
    else
      merged.honest.push_back(i);
  }
  merged.sigma2 = total_d > 0 ? sigma2_weighted / total_d : 0.0;
  merged.regime = phase_regime(std::sqrt(std::max(merged.sigma2, 0.0)), cfg.f_max, &merged.sigma2_f2);
  return merged;
}

double update_thresholds(const std::vector<KsResult>& history, int window, double fallback_tau) {
  if (history.empty()) fail(ErrorCode::InvalidInput, "empty threshold history");
  std::vector<double> accepted;
  for (const auto& h : history)
    if (!h.reject) accepted.push_back(h.statistic);
  if (accepted.size() > static_cast<std::size_t>(window))
    accepted.erase(accepted.begin(),
                   accepted.end() - static_cast<std::ptrdiff_t>(window));
  if (accepted.size() < 10) return fallback_tau;
  std::sort(accepted.begin(), accepted.end());
  const std::size_t idx = static_cast<std::size_t>(
      std::ceil(0.95 * static_cast<double>(accepted.size()))) - 1;
  return 1.1 * accepted[std::min(idx, accepted.size() - 1)];
}

}  // namespace sentinel
