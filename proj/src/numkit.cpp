#include "mlcc/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mlcc/error.hpp"

namespace mlcc {

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DomainError("matrix data length " + std::to_string(data_.size()) + " != " +
                      std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

RngSeed derive_seed(RngSeed base, std::uint64_t stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return RngSeed{mix(mix(base.value) ^ stream)};
}

double dot(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
  return s;
}

double norm(std::span<const double> u) { return std::sqrt(dot(u, u)); }

double squared_distance(std::span<const double> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return s;
}

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw DomainError("cosine: length mismatch");
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) throw DomainError("cosine: zero-norm vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

Vec masked_softmax(std::span<const double> row, std::span<const std::size_t> masked) {
  std::vector<char> is_masked(row.size(), 0);
  for (std::size_t i : masked) {
    if (i >= row.size()) throw DomainError("masked_softmax: mask index out of range");
    is_masked[i] = 1;
  }
  double peak = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!is_masked[i]) {
      peak = std::max(peak, row[i]);
      any = true;
    }
  }
  if (!any) throw DomainError("masked_softmax: every entry is masked");

  Vec out(row.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (!is_masked[i]) {
      out[i] = std::exp(row[i] - peak);
      total += out[i];
    }
  }
  for (double& v : out) v /= total;
  return out;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  // -softplus(-z)
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

double within_cluster_ss(const Mat& points, const Mat& centroids,
                         std::span<const std::size_t> assignment) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows(); ++i) {
    total += squared_distance(points.row(i), centroids.row(assignment[i]));
  }
  return total;
}

namespace {

std::size_t nearest(std::span<const double> point, const Mat& centroids) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows(); ++j) {
    const double d = squared_distance(point, centroids.row(j));
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

// Moves the farthest point of a multi-member cluster into each empty cluster
// and puts that cluster's centroid on it. Each move can only lower the cost.
void reseed_empty(const Mat& points, Mat& centroids, std::vector<std::size_t>& assignment) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : assignment) ++counts[a];
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] != 0) continue;
    std::size_t far = points.rows();
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      if (counts[assignment[i]] < 2) continue;
      const double d = squared_distance(points.row(i), centroids.row(assignment[i]));
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    --counts[assignment[far]];
    assignment[far] = j;
    counts[j] = 1;
    std::copy_n(points.row(far).begin(), points.cols(), centroids.row(j).begin());
  }
}

}  // namespace

KMeansResult kmeans(const Mat& points, std::size_t k, std::size_t max_iters, RngSeed seed) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  if (k == 0) throw DomainError("kmeans: k must be at least 1");
  if (k > n) {
    throw DomainError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(n) +
                      " points");
  }

  // Partial Fisher-Yates: the first k entries are a uniform sample without
  // replacement.
  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }

  KMeansResult result;
  result.centroids = Mat(k, dim);
  for (std::size_t j = 0; j < k; ++j) {
    std::copy_n(points.row(order[j]).begin(), dim, result.centroids.row(j).begin());
  }

  auto& assignment = result.assignment;
  assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) assignment[i] = nearest(points.row(i), result.centroids);
  reseed_empty(points, result.centroids, assignment);
  result.objective.push_back(within_cluster_ss(points, result.centroids, assignment));

  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    // Update step: centroids become cluster means.
    Mat sums(k, dim);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto s = sums.row(assignment[i]);
      auto p = points.row(i);
      for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
      ++counts[assignment[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      auto c = result.centroids.row(j);
      auto s = sums.row(j);
      for (std::size_t d = 0; d < dim; ++d) c[d] = s[d] / static_cast<double>(counts[j]);
    }
    result.objective.push_back(within_cluster_ss(points, result.centroids, assignment));
    result.iterations = it + 1;

    // Assignment step. Keep the current cluster on ties so the cost never
    // rises and the loop terminates.
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto p = points.row(i);
      std::size_t best = assignment[i];
      double best_d = squared_distance(p, result.centroids.row(best));
      for (std::size_t j = 0; j < k; ++j) {
        const double d = squared_distance(p, result.centroids.row(j));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      if (best != assignment[i]) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    reseed_empty(points, result.centroids, assignment);
  }
  return result;
}

double grad_check(const ScalarFn& f, std::span<const double> x,
                  std::span<const double> analytic, double h) {
  if (analytic.size() != x.size()) throw DomainError("grad_check: gradient length mismatch");
  Vec probe(x.begin(), x.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f(probe);
    probe[i] = saved - h;
    const double down = f(probe);
    probe[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw DomainError("grad_check: non-finite function value at coordinate " +
                        std::to_string(i));
    }
    const double fd = (up - down) / (2.0 * h);
    const double scale = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
    worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
  }
  return worst;
}

}  // namespace mlcc
