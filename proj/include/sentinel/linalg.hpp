#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "sentinel/error.hpp"

namespace sentinel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Rows are client gradients for one round.
struct GradientMatrix {
  Matrix data;  // n x d, row-major semantics (row i = client i)

  Eigen::Index n() const { return data.rows(); }
  Eigen::Index d() const { return data.cols(); }
};

// Throws InvalidInput unless n >= 2, d >= 1 and every entry is finite.
void validate_gradient_matrix(const GradientMatrix& G);

struct Spectrum {
  std::vector<double> eigenvalues;  // descending
  Eigen::Index source_dim = 0;

  std::size_t size() const { return eigenvalues.size(); }
  double operator[](std::size_t i) const { return eigenvalues[i]; }
  double trace() const;
};

// C = (1/n) G^T G, d x d.
Matrix covariance(const GradientMatrix& G);

// Full spectrum of a symmetric PSD matrix, sorted descending.
// Throws NumericalFailure if the eigensolver does not converge.
Spectrum eigenvalues_sym(const Matrix& C);

// Eigen-decomposition of a symmetric matrix; eigenvalues descending and
// eigenvectors as matching columns.
struct EigSym {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // column j pairs with eigenvalues[j]
};
EigSym eig_sym(const Matrix& C);

// Spectrum of (1/n) G^T G computed through the smaller Gram side; always
// returns n values (zero-padded when n > rank).  One value per client row.
Spectrum gram_spectrum(const Matrix& G, Eigen::Index n_divisor);

// Subtracts the column-wise median from each row (robust centering).
Matrix center_columns_median(const Matrix& G);

}  // namespace sentinel
