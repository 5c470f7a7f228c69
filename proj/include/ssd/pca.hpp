#pragma once

#include <string>

#include <Eigen/Core>

#include "ssd/gmm.hpp"

namespace ssd {

// Orthonormal linear reduction of the raw embedding space. Rows of basis are
// principal directions, ordered by descending explained variance.
struct PcaTransform {
  Vector mean;                // d_raw
  Matrix basis;               // d_pca x d_raw
  Vector explained_variance;  // d_pca, non-increasing
  std::string id;             // content hash, links checkpoints to transforms

  int d_raw() const { return static_cast<int>(mean.size()); }
  int d_pca() const { return static_cast<int>(basis.rows()); }
};

// Covariance eigendecomposition of the row-wise data matrix (n x d_raw).
// Sign convention: the largest-magnitude coordinate of each basis row is
// positive, so fits are reproducible.
PcaTransform fit_pca(const Matrix& data, int d_pca);

Vector pca_transform(const PcaTransform& t, const Vector& z);
Matrix pca_transform_rows(const PcaTransform& t, const Matrix& zs);
Vector pca_inverse_transform(const PcaTransform& t, const Vector& y);

// JSON header line + little-endian float32 blocks (mean, basis, variances).
void save_pca(const PcaTransform& t, const std::string& path);
PcaTransform load_pca(const std::string& path);

}  // namespace ssd
