#pragma once

// Dense numeric kernels shared by every module. All reductions run in a fixed
// sequential order so results are reproducible to the bit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace mlcc {

using Vec = std::vector<double>;

// Row-major dense matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct RngSeed {
  std::uint64_t value = 0;
  friend bool operator==(RngSeed, RngSeed) = default;
};

using Rng = std::mt19937_64;

inline Rng make_rng(RngSeed seed) { return Rng(seed.value); }

// Derives an independent seed for a sub-stream (epoch, sample, category...)
// by splitmix64 mixing, so sub-streams never depend on consumption order.
RngSeed derive_seed(RngSeed base, std::uint64_t stream);

double dot(std::span<const double> u, std::span<const double> v);
double norm(std::span<const double> u);
double squared_distance(std::span<const double> u, std::span<const double> v);

// u.v / (|u| |v|). Throws DomainError on length mismatch or a zero-norm input.
double cosine(std::span<const double> u, std::span<const double> v);

// Softmax over the unmasked entries of `row`; masked entries come out exactly
// 0. Stabilized by subtracting the unmasked maximum. Throws DomainError when
// every index is masked or an index is out of range.
Vec masked_softmax(std::span<const double> row, std::span<const std::size_t> masked);

inline constexpr double kProbEpsilon = 1e-12;

double sigmoid(double z);
// log(sigmoid(z)) without overflow.
double log_sigmoid(double z);
double clamp_prob(double p);

struct KMeansResult {
  Mat centroids;
  std::vector<std::size_t> assignment;
  // Within-cluster sum of squares after the initial assignment, then after
  // every centroid update. Non-increasing.
  std::vector<double> objective;
  std::size_t iterations = 0;
};

// Lloyd's algorithm. Initial centroids are k distinct rows sampled uniformly
// without replacement; a cluster that empties is reseeded with the point
// farthest from its own centroid. Throws DomainError when k == 0 or k exceeds
// the number of points.
KMeansResult kmeans(const Mat& points, std::size_t k, std::size_t max_iters, RngSeed seed);

double within_cluster_ss(const Mat& points, const Mat& centroids,
                         std::span<const std::size_t> assignment);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central-difference gradient check. Returns
//   max_i |g_fd - g_an| / max(1, |g_fd|, |g_an|).
// Throws DomainError if f evaluates to a non-finite value.
double grad_check(const ScalarFn& f, std::span<const double> x,
                  std::span<const double> analytic, double h = 1e-5);

}  // namespace mlcc
