#pragma once

#include "sentinel/linalg.hpp"

namespace sentinel {

// Frequent Directions streaming sketch.  Maintains a k x d buffer B with the
// deterministic guarantee ||G^T G - B^T B||_2 <= ||G||_F^2 / k after any
// prefix of row updates.
class FdSketch {
 public:
  FdSketch(Eigen::Index k, Eigen::Index d);

  // Inserts one row; shrinks (SVD soft-threshold by the smallest squared
  // singular value, zeroing the last row) only when no zero row is free.
  void update(Eigen::Ref<const Vector> row);

  const Matrix& buffer() const { return buffer_; }
  Eigen::Index k() const { return buffer_.rows(); }
  Eigen::Index d() const { return buffer_.cols(); }
  std::int64_t rows_seen() const { return rows_seen_; }
  double frobenius_mass() const { return frobenius_mass_; }

  // Eigenvalues of (1/n) B^T B via the k x k Gram form, zero-padded to
  // min(n, d) values to mirror the full-covariance spectrum.
  Spectrum spectrum(Eigen::Index n) const;

  // Right singular directions of the buffer for the given sketch-spectrum
  // indices (d-dimensional unit vectors, one column per requested index).
  Matrix principal_directions(const std::vector<std::size_t>& indices) const;

 private:
  void shrink();

  Matrix buffer_;
  std::int64_t rows_seen_ = 0;
  double frobenius_mass_ = 0.0;
};

// Fold of FdSketch::update over the rows of G in client-index order.
// Requires k >= 2.
FdSketch fd_sketch(const GradientMatrix& G, Eigen::Index k);

}  // namespace sentinel
