#include "sentinel/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel {

namespace {

std::vector<double> column_sorted(const Matrix& data, Eigen::Index j) {
  std::vector<double> col(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) col[static_cast<std::size_t>(i)] = data(i, j);
  std::sort(col.begin(), col.end());
  return col;
}

Matrix pairwise_sq_dists(const Matrix& data) {
  // Direct differences rather than the Gram-matrix identity: the latter is not
  // exactly symmetric in floating point, and Krum's argmin must break exact
  // ties (mutual nearest neighbours) the same way the literal definition does.
  const Eigen::Index n = data.rows();
  Matrix D = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      D(i, j) = D(j, i) = (data.row(i) - data.row(j)).squaredNorm();
  return D;
}

std::vector<double> krum_scores_impl(const Matrix& data, Eigen::Index f) {
  const Eigen::Index n = data.rows();
  Matrix D = pairwise_sq_dists(data);
  // Neighbours counted per client; degenerate pools (Bulyan's tail picks with
  // f = 0) clamp to zero so every score ties at 0.
  const Eigen::Index m = std::max<Eigen::Index>(n - f - 2, 0);
  std::vector<double> scores(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(n - 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t w = 0;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) row[w++] = D(i, j);
    std::partial_sort(row.begin(), row.begin() + m, row.end());
    scores[static_cast<std::size_t>(i)] =
        std::accumulate(row.begin(), row.begin() + m, 0.0);
  }
  return scores;
}

Eigen::Index argmin_score(const std::vector<double>& scores) {
  Eigen::Index best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[static_cast<std::size_t>(best)]) best = static_cast<Eigen::Index>(i);
  return best;
}

}  // namespace

Vector fedavg_mean(const GradientMatrix& G) {
  validate_gradient_matrix(G);
  return G.data.colwise().mean().transpose();
}

Vector coordinate_median(const GradientMatrix& G) {
  validate_gradient_matrix(G);
  const Eigen::Index n = G.n();
  Vector out(G.d());
  for (Eigen::Index j = 0; j < G.d(); ++j) {
    auto col = column_sorted(G.data, j);
    const std::size_t mid = static_cast<std::size_t>(n) / 2;
    out(j) = (n % 2 == 1) ? col[mid] : 0.5 * (col[mid - 1] + col[mid]);
  }
  return out;
}

Vector trimmed_mean(const GradientMatrix& G, double beta) {
  validate_gradient_matrix(G);
  if (!(beta >= 0.0 && beta < 0.5)) fail(ErrorCode::InvalidInput, "beta must be in [0, 0.5)");
  const Eigen::Index n = G.n();
  const auto cut = static_cast<std::size_t>(std::floor(beta * static_cast<double>(n)));
  if (2 * cut >= static_cast<std::size_t>(n))
    fail(ErrorCode::InsufficientClients, "trim removes every client");
  Vector out(G.d());
  for (Eigen::Index j = 0; j < G.d(); ++j) {
    auto col = column_sorted(G.data, j);
    const double sum = std::accumulate(col.begin() + static_cast<std::ptrdiff_t>(cut),
                                       col.end() - static_cast<std::ptrdiff_t>(cut), 0.0);
    out(j) = sum / static_cast<double>(col.size() - 2 * cut);
  }
  return out;
}

std::vector<double> krum_scores(const GradientMatrix& G, Eigen::Index f) {
  validate_gradient_matrix(G);
  if (f < 0) fail(ErrorCode::InvalidInput, "f must be >= 0");
  if (G.n() < 2 * f + 3)
    fail(ErrorCode::InsufficientClients, "krum requires n >= 2f + 3");
  return krum_scores_impl(G.data, f);
}

Vector krum(const GradientMatrix& G, Eigen::Index f) {
  auto scores = krum_scores(G, f);
  return G.data.row(argmin_score(scores)).transpose();
}

Vector multi_krum(const GradientMatrix& G, Eigen::Index f) {
  auto scores = krum_scores(G, f);
  const Eigen::Index n = G.n();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return scores[static_cast<std::size_t>(a)] < scores[static_cast<std::size_t>(b)];
  });
  const Eigen::Index keep = n - f;
  Vector sum = Vector::Zero(G.d());
  for (Eigen::Index r = 0; r < keep; ++r) sum += G.data.row(order[static_cast<std::size_t>(r)]).transpose();
  return sum / static_cast<double>(keep);
}

Vector geometric_median(const GradientMatrix& G, const GeomMedianOptions& opt) {
  validate_gradient_matrix(G);
  if (opt.max_iters < 1 || opt.tol <= 0.0 || opt.eps <= 0.0)
    fail(ErrorCode::InvalidInput, "bad Weiszfeld options");
  Vector x = G.data.colwise().mean().transpose();
  for (int it = 0; it < opt.max_iters; ++it) {
    Vector num = Vector::Zero(G.d());
    double denom = 0.0;
    for (Eigen::Index i = 0; i < G.n(); ++i) {
      const double dist = std::sqrt((G.data.row(i).transpose() - x).squaredNorm() + opt.eps * opt.eps);
      const double w = 1.0 / dist;
      num += w * G.data.row(i).transpose();
      denom += w;
    }
    Vector next = num / denom;
    const double step = (next - x).norm();
    x = next;
    if (step < opt.tol) break;
  }
  return x;
}

Vector bulyan(const GradientMatrix& G, Eigen::Index f) {
  validate_gradient_matrix(G);
  if (f < 0) fail(ErrorCode::InvalidInput, "f must be >= 0");
  const Eigen::Index n = G.n();
  if (n < 4 * f + 3)
    fail(ErrorCode::InsufficientClients, "bulyan requires n >= 4f + 3");

  // Selection phase: repeatedly pick the Krum winner and remove it.
  std::vector<Eigen::Index> remaining(static_cast<std::size_t>(n));
  std::iota(remaining.begin(), remaining.end(), 0);
  const Eigen::Index select = n - 2 * f;
  Matrix pool = G.data;
  std::vector<Eigen::Index> chosen;
  for (Eigen::Index s = 0; s < select; ++s) {
    auto scores = krum_scores_impl(pool, f);
    const Eigen::Index w = argmin_score(scores);
    chosen.push_back(remaining[static_cast<std::size_t>(w)]);
    remaining.erase(remaining.begin() + w);
    Matrix next(pool.rows() - 1, pool.cols());
    next.topRows(w) = pool.topRows(w);
    next.bottomRows(pool.rows() - 1 - w) = pool.bottomRows(pool.rows() - 1 - w);
    pool = std::move(next);
  }

  Matrix sel(select, G.d());
  for (Eigen::Index r = 0; r < select; ++r) sel.row(r) = G.data.row(chosen[static_cast<std::size_t>(r)]);
  Vector out(G.d());
  for (Eigen::Index j = 0; j < G.d(); ++j) {
    auto col = column_sorted(sel, j);
    const double sum = std::accumulate(col.begin() + f, col.end() - f, 0.0);
    out(j) = sum / static_cast<double>(select - 2 * f);
  }
  return out;
}

SentinelResult sentinel_aggregate(const GradientMatrix& G, const DetectorConfig& cfg) {
  SentinelResult res;
  res.report = detect(G, cfg);
  if (res.report.honest.empty()) {
    res.fallback = true;
    res.warning = "empty honest set after screening; falling back to coordinate median";
    res.aggregate = coordinate_median(G);
    return res;
  }
  Vector sum = Vector::Zero(G.d());
  for (Eigen::Index i : res.report.honest) sum += G.data.row(i).transpose();
  res.aggregate = sum / static_cast<double>(res.report.honest.size());
  return res;
}

Aggregator make_aggregator(const std::string& name, Eigen::Index f, double beta,
                           const DetectorConfig& cfg) {
  if (name == "sentinel")
    return [cfg](const GradientMatrix& G) { return sentinel_aggregate(G, cfg).aggregate; };
  if (name == "fedavg") return [](const GradientMatrix& G) { return fedavg_mean(G); };
  if (name == "coord_median") return [](const GradientMatrix& G) { return coordinate_median(G); };
  if (name == "trimmed_mean")
    return [beta](const GradientMatrix& G) { return trimmed_mean(G, beta); };
  if (name == "krum") return [f](const GradientMatrix& G) { return krum(G, f); };
  if (name == "multi_krum") return [f](const GradientMatrix& G) { return multi_krum(G, f); };
  if (name == "geometric_median")
    return [](const GradientMatrix& G) { return geometric_median(G); };
  if (name == "bulyan") return [f](const GradientMatrix& G) { return bulyan(G, f); };
  fail(ErrorCode::InvalidInput, "unknown aggregator: " + name);
}

std::vector<std::string> aggregator_names() {
  return {"sentinel", "fedavg", "coord_median", "trimmed_mean",
          "krum",     "multi_krum", "geometric_median", "bulyan"};
}

}  // namespace sentinel
