#pragma once

// Shared fixtures for the unit tests.

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "mlcc/datagen.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mlcc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Vec random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Mat random_mat(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  const Vec v = random_vec(rng, rows * cols, lo, hi);
  return Mat(rows, cols, v);
}

// Labels with at least one positive per row.
inline LabelMatrix random_labels(Rng& rng, std::size_t rows, std::size_t cols, double rate = 0.3) {
  std::bernoulli_distribution on(rate);
  std::uniform_int_distribution<std::size_t> pick(0, cols - 1);
  LabelMatrix y(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y.set(r, c, on(rng));
    if (y.count_row(r) == 0) y.set(r, pick(rng), true);
  }
  return y;
}

inline PredictionLog random_log(Rng& rng, std::size_t rows, std::size_t cols) {
  PredictionLog log;
  for (std::size_t i = 0; i < rows; ++i) log.ids.push_back(static_cast<std::int64_t>(i));
  log.probs = random_mat(rng, rows, cols, 0.0, 1.0);
  log.labels = random_labels(rng, rows, cols);
  return log;
}

}  // namespace mlcc::testing
