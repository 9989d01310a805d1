#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mlcc/datagen.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc {

// Per-sample, per-category feature vectors (N x C x D_f) together with the
// labels that define each category's pool of positive samples.
class FeatureBank {
 public:
  FeatureBank() = default;
  FeatureBank(std::vector<std::int64_t> ids, LabelMatrix labels, std::size_t feature_dim);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t categories() const noexcept { return labels_.cols(); }
  std::size_t feature_dim() const noexcept { return feature_dim_; }

  const std::vector<std::int64_t>& ids() const noexcept { return ids_; }
  const LabelMatrix& labels() const noexcept { return labels_; }
  // Ascending sample indices whose label for `category` is positive.
  const std::vector<std::size_t>& positives(std::size_t category) const { return positives_[category]; }

  std::span<const double> feature(std::size_t sample, std::size_t category) const {
    return {data_.data() + (sample * categories() + category) * feature_dim_, feature_dim_};
  }
  // C x D_f block for one sample.
  Mat sample_features(std::size_t sample) const;
  void set_sample(std::size_t sample, const Mat& features);

  // Rows = features of `category` for each of its positive samples.
  Mat positive_features(std::size_t category) const;

  bool all_finite() const noexcept;

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;

 private:
  std::vector<std::int64_t> ids_;
  LabelMatrix labels_;
  std::size_t feature_dim_ = 0;
  std::vector<std::vector<std::size_t>> positives_;
  std::vector<double> data_;
};

// JSON-lines {"id","c","f"}, one record per (sample, category).
void save_feature_bank(const FeatureBank& bank, const std::filesystem::path& path);
// Labels are not part of the file; they come from the matching dataset rows.
FeatureBank load_feature_bank(const std::filesystem::path& path, const Dataset& ds);

}  // namespace mlcc
