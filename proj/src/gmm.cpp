#include "ssd/gmm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "ssd/rng.hpp"

namespace ssd {

namespace {
constexpr double kLn2Pi = 1.8378770664093454836;
}

GaussianMixture::GaussianMixture(Vector w, Matrix mu, Matrix sigma)
    : weights(std::move(w)), means(std::move(mu)), scales(std::move(sigma)) {
  const int K = static_cast<int>(weights.size());
  if (K < 1) throw std::invalid_argument("mixture needs at least one component");
  if (means.rows() != K || scales.rows() != K)
    throw std::invalid_argument("mixture component count mismatch");
  if (means.cols() < 1 || means.cols() != scales.cols())
    throw std::invalid_argument("mixture dimension mismatch");
  if (!weights.allFinite() || !means.allFinite() || !scales.allFinite())
    throw std::invalid_argument("mixture parameters must be finite");
  if (weights.minCoeff() < 0.0)
    throw std::invalid_argument("mixture weights must be nonnegative");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw std::invalid_argument("mixture weights must sum to 1");
  scales = scales.cwiseMax(kScaleFloor);
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf (or a nan propagates)
  double s = 0.0;
  for (int i = 0; i < v.size(); ++i) s += std::exp(v(i) - m);
  return m + std::log(s);
}

double log_density(const GaussianMixture& m, const Vector& z) {
  if (z.size() != m.dim())
    throw std::invalid_argument("log_density: point dimension mismatch");
  const int K = m.components();
  const int d = m.dim();
  Vector terms(K);
  for (int k = 0; k < K; ++k) {
    if (m.weights(k) == 0.0) {
      terms(k) = -std::numeric_limits<double>::infinity();
      continue;
    }
    const auto sig = m.scales.row(k).transpose().array();
    const auto diff = (z - m.means.row(k).transpose()).array() / sig;
    terms(k) = std::log(m.weights(k)) - 0.5 * d * kLn2Pi -
               sig.log().sum() - 0.5 * diff.square().sum();
  }
  return log_sum_exp(terms);
}

Vector log_density_batch(const GaussianMixture& m, const Matrix& zs) {
  if (zs.cols() != m.dim())
    throw std::invalid_argument("log_density_batch: point dimension mismatch");
  const int n = static_cast<int>(zs.rows());
  const int K = m.components();
  const int d = m.dim();
  Matrix comp(n, K);
  for (int k = 0; k < K; ++k) {
    if (m.weights(k) == 0.0) {
      comp.col(k).setConstant(-std::numeric_limits<double>::infinity());
      continue;
    }
    const Eigen::ArrayXd sig = m.scales.row(k).transpose().array();
    const double c = std::log(m.weights(k)) - 0.5 * d * kLn2Pi - sig.log().sum();
    Eigen::ArrayXXd t = (zs.rowwise() - m.means.row(k)).array();
    t.rowwise() /= sig.transpose();
    comp.col(k) = c - 0.5 * t.square().rowwise().sum();
  }
  Vector out(n);
  for (int i = 0; i < n; ++i) out(i) = log_sum_exp(comp.row(i).transpose());
  return out;
}

namespace {

// log N(mu_i; mu_j, diag(sigma_i^2 + sigma_j^2))
double log_overlap(const GaussianMixture& m, int i, int j) {
  const auto var = (m.scales.row(i).array().square() +
                    m.scales.row(j).array().square()).eval();
  const auto diff = (m.means.row(i) - m.means.row(j)).array().eval();
  return -0.5 * m.dim() * kLn2Pi - 0.5 * var.log().sum() -
         0.5 * (diff.square() / var).sum();
}

}  // namespace

CollisionMatrix collision_matrix(const GaussianMixture& m) {
  const int K = m.components();
  CollisionMatrix cm;
  cm.log_entries.resize(K, K);
  for (int i = 0; i < K; ++i) {
    for (int j = i; j < K; ++j) {
      const double v = log_overlap(m, i, j);
      cm.log_entries(i, j) = v;
      cm.log_entries(j, i) = v;
    }
  }
  cm.entries = cm.log_entries.array().exp();
  return cm;
}

double renyi2_entropy(const GaussianMixture& m) {
  const int K = m.components();
  Vector terms(K * K);
  int t = 0;
  for (int i = 0; i < K; ++i) {
    for (int j = 0; j < K; ++j) {
      if (m.weights(i) == 0.0 || m.weights(j) == 0.0) {
        terms(t++) = -std::numeric_limits<double>::infinity();
        continue;
      }
      terms(t++) = std::log(m.weights(i)) + std::log(m.weights(j)) +
                   log_overlap(m, i, j);
    }
  }
  return -log_sum_exp(terms);
}

Vector mixture_mean(const GaussianMixture& m) {
  return m.means.transpose() * m.weights;
}

Matrix sample(const GaussianMixture& m, std::uint64_t seed, int n) {
  if (n < 1) throw std::invalid_argument("sample: n must be >= 1");
  Rng rng(seed);
  const int d = m.dim();
  Matrix out(n, d);
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(m.weights);
    for (int j = 0; j < d; ++j)
      out(i, j) = m.means(k, j) + m.scales(k, j) * rng.normal();
  }
  return out;
}

}  // namespace ssd
