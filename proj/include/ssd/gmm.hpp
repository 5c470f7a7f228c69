#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace ssd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Standard deviations below this are clamped on construction; overlap
// integrals divide by sigma_i^2 + sigma_j^2 and cannot tolerate zeros.
inline constexpr double kScaleFloor = 1e-4;

// Diagonal-covariance Gaussian mixture over a d_z-dimensional embedding
// space. Rows of means/scales are components.
struct GaussianMixture {
  Vector weights;  // K, nonnegative, sums to 1
  Matrix means;    // K x d_z
  Matrix scales;   // K x d_z, per-dimension standard deviations

  GaussianMixture(Vector w, Matrix mu, Matrix sigma);

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.cols()); }
};

// K x K matrix of pairwise Gaussian overlap integrals
// N(mu_i; mu_j, diag(sigma_i^2 + sigma_j^2)).
struct CollisionMatrix {
  Matrix entries;
  Matrix log_entries;
};

// log q(z), evaluated with log-sum-exp over components.
double log_density(const GaussianMixture& m, const Vector& z);

// Row-wise log q(z) for a batch of points (n x d_z).
Vector log_density_batch(const GaussianMixture& m, const Matrix& zs);

CollisionMatrix collision_matrix(const GaussianMixture& m);

// Order-2 Renyi entropy, -log(pi' K pi), accumulated in log domain.
double renyi2_entropy(const GaussianMixture& m);

Vector mixture_mean(const GaussianMixture& m);

// n draws, one per row; categorical component choice then diagonal Gaussian.
Matrix sample(const GaussianMixture& m, std::uint64_t seed, int n);

// log-sum-exp that tolerates -inf entries.
double log_sum_exp(const Vector& v);

}  // namespace ssd
