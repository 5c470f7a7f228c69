#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace ssd {

// Seeded RNG with hand-rolled transforms so sampled values depend only on the
// mt19937_64 bit stream, not on libstdc++ distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    const int span = hi - lo + 1;
    int k = static_cast<int>(uniform() * span);
    if (k >= span) k = span - 1;
    return lo + k;
  }

  // Categorical draw on a probability vector (assumed to sum to ~1).
  int categorical(const Eigen::VectorXd& probs) {
    const double u = uniform();
    double acc = 0.0;
    for (int k = 0; k < probs.size(); ++k) {
      acc += probs(k);
      if (u < acc) return k;
    }
    return static_cast<int>(probs.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(0, i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ssd
