#include "sentinel/fd_sketch.hpp"

#include <algorithm>
#include <cmath>

namespace sentinel {

FdSketch::FdSketch(Eigen::Index k, Eigen::Index d) {
  if (k < 2) fail(ErrorCode::InvalidInput, "sketch size k must be >= 2");
  if (d < 1) fail(ErrorCode::InvalidInput, "ambient dimension must be >= 1");
  buffer_ = Matrix::Zero(k, d);
}

void FdSketch::update(Eigen::Ref<const Vector> row) {
  if (row.size() != d()) fail(ErrorCode::InvalidInput, "row dimension mismatch");
  if (!row.allFinite()) fail(ErrorCode::InvalidInput, "row has non-finite entries");

  Eigen::Index slot = -1;
  for (Eigen::Index i = 0; i < k(); ++i) {
    if (buffer_.row(i).isZero(0.0)) {
      slot = i;
      break;
    }
  }
  if (slot < 0) {
    shrink();
    slot = k() - 1;  // shrink always frees the last row
  }
  buffer_.row(slot) = row.transpose();
  ++rows_seen_;
  frobenius_mass_ += row.squaredNorm();
}

void FdSketch::shrink() {
  // SVD through the k x k Gram matrix: B = U S V^T with B B^T = U S^2 U^T.
  // New buffer rows are sqrt(max(S^2 - s_k^2, 0)) scaled rows of U^T B.
  Matrix gram = buffer_ * buffer_.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(gram);
  if (solver.info() != Eigen::Success)
    fail(ErrorCode::NumericalFailure, "FD shrink eigensolver did not converge");
  Vector s2 = solver.eigenvalues().reverse();       // descending squared singular values
  Matrix U = solver.eigenvectors().rowwise().reverse();
  const double delta = std::max(s2(k() - 1), 0.0);

  Matrix rotated = U.transpose() * buffer_;  // rows are s_i * v_i^T
  for (Eigen::Index i = 0; i < k(); ++i) {
    const double si2 = std::max(s2(i), 0.0);
    const double target2 = std::max(si2 - delta, 0.0);
    if (target2 <= 0.0 || si2 <= 0.0) {
      rotated.row(i).setZero();
    } else {
      rotated.row(i) *= std::sqrt(target2 / si2);
    }
  }
  buffer_ = rotated;
}

Spectrum FdSketch::spectrum(Eigen::Index n) const {
  if (n < 1) fail(ErrorCode::InvalidInput, "n must be >= 1");
  Spectrum s = gram_spectrum(buffer_, n);
  const std::size_t target = static_cast<std::size_t>(std::min<Eigen::Index>(n, d()));
  s.eigenvalues.resize(target, 0.0);
  s.source_dim = static_cast<Eigen::Index>(target);
  return s;
}

Matrix FdSketch::principal_directions(const std::vector<std::size_t>& indices) const {
  Matrix gram = buffer_ * buffer_.transpose();
  EigSym eig = eig_sym(gram);
  Matrix dirs(d(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t c = 0; c < indices.size(); ++c) {
    const auto j = static_cast<Eigen::Index>(indices[c]);
    if (j >= k()) {
      dirs.col(static_cast<Eigen::Index>(c)).setZero();
      continue;
    }
    Vector v = buffer_.transpose() * eig.eigenvectors.col(j);
    const double norm = v.norm();
    dirs.col(static_cast<Eigen::Index>(c)) = norm > 0 ? Vector(v / norm) : Vector(Vector::Zero(d()));
  }
  return dirs;
}

FdSketch fd_sketch(const GradientMatrix& G, Eigen::Index k) {
  validate_gradient_matrix(G);
  FdSketch s(k, G.d());
  for (Eigen::Index i = 0; i < G.n(); ++i) s.update(G.data.row(i).transpose());
  return s;
}

}  // namespace sentinel
