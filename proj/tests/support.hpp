#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "slomo/matrix.hpp"
#include "slomo/network.hpp"
#include "slomo/rng.hpp"

namespace slomo::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                            double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = g(rng);
  return m;
}

inline Matrix random_probs(std::size_t rows, std::size_t cols, std::uint64_t seed,
                           double scale = 2.0) {
  return softmax(random_matrix(rows, cols, seed, scale));
}

// Bias, affine and running statistics away from their initial values.
inline NetworkParams scrambled_params(const NetworkSpec& spec, std::uint64_t seed) {
  NetworkParams p = init_params(spec, seed);
  Rng rng(seed + 17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& l : p.layers) {
    for (double& v : l.bias) v = u(rng);
    for (double& v : l.gamma) v = 1.0 + u(rng);
    for (double& v : l.beta) v = u(rng);
    for (double& v : l.running_mean) v = u(rng);
    for (double& v : l.running_var) v = 1.0 + u(rng);
  }
  return p;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

}  // namespace slomo::testing
