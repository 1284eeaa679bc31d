#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "kinegraph/matrix.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace kinegraph::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(KINEGRAPH_FIXTURE_DIR) / name;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

inline Matrix random_symmetric(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Matrix m = random_matrix(rng, n, n, lo, hi);
  return (m + m.transpose()) * 0.5;
}

// Nonnegative symmetric matrix whose rows all sum to one.
inline Matrix random_row_normalized_symmetric(std::mt19937_64& rng, std::size_t n) {
  Matrix w = random_symmetric(rng, n, 0.0, 1.0);
  std::vector<double> deg(n, 0.0);
  double top = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (double x : w.row(i)) deg[i] += x;
    top = std::max(top, deg[i]);
  }
  for (std::size_t i = 0; i < n; ++i) w(i, i) += top - deg[i];
  return w * (1.0 / top);
}

// Q^{-1/2} W Q^{-1/2} for a random nonnegative symmetric W; spectrum in [-1, 1].
inline Matrix random_symmetric_normalized(std::mt19937_64& rng, std::size_t n) {
  Matrix w = random_symmetric(rng, n, 0.0, 1.0);
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = 0.0;
    for (double x : w.row(i)) q += x;
    inv[i] = 1.0 / std::sqrt(q);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) w(i, j) *= inv[i] * inv[j];
  return w;
}

inline SkeletonSequence random_sequence(std::mt19937_64& rng, std::size_t frames, std::size_t joints,
                                        std::size_t dims = 3) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  SkeletonSequence s = SkeletonSequence::zeros(frames, joints, dims);
  for (double& v : s.data) v = dist(rng);
  return s;
}

}  // namespace kinegraph::testing
