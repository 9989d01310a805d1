#pragma once

// Synthetic multi-label data with a planted category-similarity structure,
// plus dataset and prediction-log file I/O.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlcc/numkit.hpp"

namespace mlcc {

// N x C multi-hot ground truth.
class LabelMatrix {
 public:
  LabelMatrix() = default;
  LabelMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
  std::span<const std::uint8_t> row(std::size_t r) const { return {bits_.data() + r * cols_, cols_}; }

  std::size_t count_row(std::size_t r) const;
  std::size_t count_col(std::size_t c) const;
  Mat as_mat() const;

  friend bool operator==(const LabelMatrix&, const LabelMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct SimilarityBlock {
  std::vector<std::size_t> members;
  double similarity = 0.0;  // target cosine between member class means, in [0, 1)
};

struct GenConfig {
  std::size_t categories = 20;
  std::size_t dim = 64;
  std::size_t samples = 5000;
  double avg_labels = 3.0;
  std::vector<SimilarityBlock> blocks;
  double noise_sigma = 1.2;
  // Probability that a drawn label comes from the sample's chosen block (4:1).
  double block_bias = 0.8;
  RngSeed seed{};

  // Throws ConfigError.
  void validate() const;

  // C=20, D=64, N=5000, three labels per sample on average; two groups of ten
  // categories at similarity 0.3, each split into two groups of five at 0.7.
  static GenConfig default_preset();
  // Small, fast configuration for tests and smoke runs.
  static GenConfig tiny_preset();
  // Throws ConfigError for an unknown name.
  static GenConfig preset(const std::string& name);
};

struct Dataset {
  std::vector<std::int64_t> ids;
  Mat inputs;          // N x D
  LabelMatrix labels;  // N x C
  Mat planted_similarity;  // C x C, symmetric, unit diagonal
  GenConfig config;

  std::size_t size() const noexcept { return inputs.rows(); }
  std::size_t categories() const noexcept { return labels.cols(); }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.ids == b.ids && a.inputs == b.inputs && a.labels == b.labels &&
           a.planted_similarity == b.planted_similarity;
  }
};

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows);

struct PredictionLog {
  std::vector<std::int64_t> ids;
  Mat probs;  // N x C, entries in [0, 1]
  LabelMatrix labels;

  std::size_t size() const noexcept { return probs.rows(); }
  // Throws SchemaError.
  void validate() const;
};

// S(a, b) = largest similarity among blocks holding both a and b, 0 when none
// does; unit diagonal.
Mat planted_similarity(const GenConfig& config);

// Unit-norm class means (C x D) whose Gram matrix equals planted_similarity:
// the Cholesky factor of the target Gram matrix embedded through a seeded
// random orthonormal frame. Throws ConfigError when the structure is not
// realizable (similarity >= 1 or an indefinite target).
Mat plant_means(const GenConfig& config);

Dataset generate(const GenConfig& config);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, first floor(fraction * n) rows train; both lists ascending.
Split train_test_split(std::size_t n, double train_fraction, RngSeed seed);

// JSON-lines, one {"id","x","y"} record per sample, plus <path>.meta.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// JSON-lines, one {"id","p","y"} record per sample.
void save_prediction_log(const PredictionLog& log, const std::filesystem::path& path);
PredictionLog load_prediction_log(const std::filesystem::path& path);

nlohmann::json to_json(const GenConfig& config);
GenConfig gen_config_from_json(const nlohmann::json& j);

std::filesystem::path meta_path(const std::filesystem::path& dataset_path);

}  // namespace mlcc
