#include "sentinel/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sentinel {

void validate_gradient_matrix(const GradientMatrix& G) {
  if (G.n() < 2 || G.d() < 1) fail(ErrorCode::InvalidInput, "gradient matrix needs n >= 2, d >= 1");
  if (!G.data.allFinite()) fail(ErrorCode::InvalidInput, "gradient matrix has non-finite entries");
}

double Spectrum::trace() const {
  return std::accumulate(eigenvalues.begin(), eigenvalues.end(), 0.0);
}

Matrix covariance(const GradientMatrix& G) {
  validate_gradient_matrix(G);
  const double inv_n = 1.0 / static_cast<double>(G.n());
  Matrix C = inv_n * (G.data.transpose() * G.data);
  return C;
}

Spectrum eigenvalues_sym(const Matrix& C) {
  if (C.rows() != C.cols()) fail(ErrorCode::InvalidInput, "matrix not square");
  if (!C.allFinite()) fail(ErrorCode::InvalidInput, "matrix has non-finite entries");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(C, Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    fail(ErrorCode::NumericalFailure, "symmetric eigensolver did not converge (max 30*m sweeps)");
  Spectrum s;
  const auto& ev = solver.eigenvalues();  // ascending
  s.eigenvalues.assign(ev.data(), ev.data() + ev.size());
  std::reverse(s.eigenvalues.begin(), s.eigenvalues.end());
  s.source_dim = C.rows();
  return s;
}

EigSym eig_sym(const Matrix& C) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(C);
  if (solver.info() != Eigen::Success)
    fail(ErrorCode::NumericalFailure, "symmetric eigensolver did not converge (max 30*m sweeps)");
  const Eigen::Index m = C.rows();
  EigSym out;
  out.eigenvalues = solver.eigenvalues().reverse();
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  (void)m;
  return out;
}

Spectrum gram_spectrum(const Matrix& G, Eigen::Index n_divisor) {
  const Eigen::Index n = G.rows();
  const Eigen::Index d = G.cols();
  const double inv = 1.0 / static_cast<double>(n_divisor);
  Spectrum s;
  if (n <= d) {
    Matrix M = inv * (G * G.transpose());
    s = eigenvalues_sym(M);
  } else {
    Matrix M = inv * (G.transpose() * G);
    s = eigenvalues_sym(M);
    s.eigenvalues.resize(static_cast<std::size_t>(n), 0.0);  // pad rank deficit with zeros
  }
  s.source_dim = n;
  // Clamp tiny negative round-off so downstream density/CDF code sees a PSD spectrum.
  double top = s.eigenvalues.empty() ? 0.0 : std::max(s.eigenvalues.front(), 0.0);
  for (double& v : s.eigenvalues)
    if (v < 0.0 && v > -1e-9 * std::max(top, 1.0)) v = 0.0;
  return s;
}

Matrix center_columns_median(const Matrix& G) {
  const Eigen::Index n = G.rows();
  const Eigen::Index d = G.cols();
  Matrix out = G;
  std::vector<double> col(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < d; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = G(i, j);
    auto mid = col.begin() + n / 2;
    std::nth_element(col.begin(), mid, col.end());
    double med = *mid;
    if (n % 2 == 0) {
      double lo = *std::max_element(col.begin(), mid);
      med = 0.5 * (lo + med);
    }
    out.col(j).array() -= med;
  }
  return out;
}

}  // namespace sentinel
