#pragma once

// Calibration and ranking metrics over pooled multi-label predictions. Every
// (sample, class) entry is one binary decision with confidence max(p, 1 - p)
// and correctness (p > 0.5) == y. All reported values are percentages.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlcc/datagen.hpp"

namespace mlcc {

struct PooledPrediction {
  double confidence = 0.0;
  bool correct = false;
  std::int64_t id = 0;
  std::size_t category = 0;
};

// Pooled pairs sorted by (confidence, sample id, category), so the result does
// not depend on row order. `category` restricts pooling to one column.
std::vector<PooledPrediction> pool(const PredictionLog& log,
                                   std::optional<std::size_t> category = std::nullopt);

enum class BinScheme { equal_width, equal_mass };

struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_conf = 0.0;  // 0 for an empty bin
  double mean_acc = 0.0;
};

struct ReliabilityTable {
  std::vector<ReliabilityBin> bins;
  BinScheme scheme = BinScheme::equal_width;
  std::optional<std::size_t> category;  // nullopt = global

  std::size_t total() const;
};

// B equal-width bins over [0.5, 1]; pooled confidences never fall below 0.5.
// Throws DomainError for B == 0 or an empty scope.
ReliabilityTable reliability(const PredictionLog& log, std::size_t bins,
                             std::optional<std::size_t> category = std::nullopt);
// R contiguous groups of the sorted pool, sizes differing by at most one with
// the earlier groups taking the remainder. Bin edges are the group's extreme
// confidences. Throws DomainError when fewer than R predictions exist.
ReliabilityTable equal_mass_groups(const PredictionLog& log, std::size_t groups,
                                   std::optional<std::size_t> category = std::nullopt);

double ece(const PredictionLog& log, std::size_t bins);
double mce(const PredictionLog& log, std::size_t bins);
double ace(const PredictionLog& log, std::size_t groups);

// The same scalars recomputed from a table's rows.
double ece_from_table(const ReliabilityTable& table);
double mce_from_table(const ReliabilityTable& table);
double ace_from_table(const ReliabilityTable& table);

struct MapResult {
  double map = 0.0;            // percent, over included categories
  std::vector<double> ap;      // per category, NaN when excluded
  std::vector<std::size_t> excluded;  // categories without a positive
};

// Ties in p are ranked by ascending sample id. Throws DomainError when no
// category has a positive.
MapResult mean_average_precision(const PredictionLog& log);
double map(const PredictionLog& log);

struct CalibrationReport {
  double ece = 0.0;
  double ace = 0.0;
  double mce = 0.0;
  double map = 0.0;
  std::size_t n_bins = 15;
  std::size_t n_groups = 15;
  std::vector<std::size_t> excluded_categories;
  ReliabilityTable global;
  std::vector<ReliabilityTable> per_category;
};

CalibrationReport evaluate(const PredictionLog& log, std::size_t bins = 15, std::size_t groups = 15);

nlohmann::json to_json(const ReliabilityTable& table);
// Scalars plus the global table; per-category tables go to their own CSVs.
nlohmann::json to_json(const CalibrationReport& report);

// Header bin_lo,bin_hi,count,mean_conf,mean_acc.
std::string to_csv(const ReliabilityTable& table);
// Throws ParseError / SchemaError.
ReliabilityTable reliability_from_csv(const std::string& text);

// Spearman rank correlation with average ranks for ties. Throws DomainError
// on a length mismatch, fewer than two points or a constant input.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace mlcc
