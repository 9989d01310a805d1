#pragma once

// Category-specific contrastive feature learner. Each category owns a linear
// projection followed by relu, and a logistic classifier reading only its own
// feature vector. Training minimizes the auxiliary classification loss
// against the correlation-aware soft labels plus the pairwise contrastive
// loss, with plain mini-batch gradient descent.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "mlcc/correlation.hpp"
#include "mlcc/datagen.hpp"
#include "mlcc/feature_bank.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  std::size_t feature_dim = 32;
  double alpha = 0.05;
  double eta = 0.5;
  std::size_t retrieve = 4;      // T
  std::size_t prototypes = 10;   // K
  std::size_t kmeans_iters = 25;
  // Epochs at the start trained against multi-label smoothed targets while
  // the features are still untrained.
  std::size_t warmup_epochs = 1;
  bool use_acl = true;
  bool use_contrastive = true;
  RngSeed seed{};

  // Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct ExtractorParams {
  std::vector<Mat> weights;  // per category, D_f x D
  Mat bias;                  // C x D_f
  Mat cls_weight;            // C x D_f
  Vec cls_bias;              // C

  std::size_t categories() const noexcept { return weights.size(); }
  std::size_t input_dim() const noexcept { return weights.empty() ? 0 : weights.front().cols(); }
  std::size_t feature_dim() const noexcept { return bias.cols(); }

  // Zero parameters of the given shape.
  static ExtractorParams zeros(std::size_t categories, std::size_t input_dim, std::size_t feature_dim);
  // Every W_c starts from one shared seeded Gaussian matrix, so all categories
  // begin in a common feature space; classifier weights are small and
  // category specific.
  static ExtractorParams initial(std::size_t categories, std::size_t input_dim, std::size_t feature_dim,
                                 RngSeed seed);

  // Layout: W_0..W_{C-1} row-major, then bias, cls_weight, cls_bias.
  std::size_t size() const noexcept;
  Vec flatten() const;
  void assign(std::span<const double> flat);
  void add_scaled(const ExtractorParams& other, double scale);
  bool all_finite() const noexcept;

  friend bool operator==(const ExtractorParams&, const ExtractorParams&) = default;
};

nlohmann::json to_json(const ExtractorParams& params);
ExtractorParams extractor_params_from_json(const nlohmann::json& j);

// f_c = relu(W_c x + b_c), returned as C x D_f. Throws DomainError on a
// dimension mismatch.
Mat extract_features(const ExtractorParams& params, std::span<const double> x);

// p_c = sigmoid(v_c . f_c + beta_c).
Vec aux_classify(const ExtractorParams& params, const Mat& features);

// 1 - cos when both labels are positive, 1 + cos otherwise. Throws
// DomainError for a zero-norm feature.
double contrastive_pair_loss(std::span<const double> f_m, std::span<const double> f_n, bool y_m, bool y_n);

// Multi-label smoothed targets used during warm-up; a row with every class
// positive keeps 1 - alpha everywhere, matching soften().
Vec warmup_targets(std::span<const std::uint8_t> labels, double alpha);

struct CsclLoss {
  double acl = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  ExtractorParams grad;  // empty unless requested
};

// Loss on one batch with frozen targets.
//   acl         = eta / B * sum_m [bce(p_m, ins_m) + bce(p_m, pro_m)]
//   contrastive = 1 / B * sum_m sum_c 1 / (B - 1) * sum_{n != m} l_c(m, n)
// Rows of `inputs`, `labels`, `ins` and `pro` are the batch samples. A zero
// feature contributes similarity 0 and no gradient to the contrastive term.
CsclLoss cscl_batch_loss(const ExtractorParams& params, const Mat& inputs, const LabelMatrix& labels,
                         const Mat& ins, const Mat& pro, const TrainConfig& cfg, bool want_grad);

struct CsclEpoch {
  double acl = 0.0;  // means over batches
  double contrastive = 0.0;
  double total = 0.0;
};

struct CsclResult {
  ExtractorParams params;
  FeatureBank bank;  // computed with the final params
  std::vector<CsclEpoch> history;
};

// Features of every dataset row under `params`.
FeatureBank compute_bank(const ExtractorParams& params, const Dataset& ds);

// Throws TrainingError naming epoch and batch when the loss stops being finite.
CsclResult train_cscl(const Dataset& ds, const TrainConfig& cfg);

}  // namespace mlcc
