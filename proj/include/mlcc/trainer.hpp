#pragma once

// Stage-2 multi-label classifier trained under any configured loss. DCLR runs
// read only the frozen soft labels, never the hard ones.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlcc/correlation.hpp"
#include "mlcc/datagen.hpp"
#include "mlcc/losses.hpp"
#include "mlcc/metrics.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc {

struct MlrHparams {
  double learning_rate = 0.1;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  std::size_t hidden_units = 0;  // 0 = linear classifier
  double train_fraction = 0.8;
  RngSeed split_seed{};
  std::size_t bins = 15;
  std::size_t groups = 15;

  // Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const MlrHparams& h);
MlrHparams mlr_hparams_from_json(const nlohmann::json& j, MlrHparams base = {});

struct MlrParams {
  Mat hidden_weight;  // H x D, empty for the linear model
  Vec hidden_bias;
  Mat weight;  // C x D (or C x H)
  Vec bias;    // C

  bool linear() const noexcept { return hidden_weight.empty(); }
  std::size_t input_dim() const noexcept { return linear() ? weight.cols() : hidden_weight.cols(); }
  std::size_t categories() const noexcept { return weight.rows(); }
  bool all_finite() const noexcept;
  void add_scaled(const MlrParams& other, double scale);
  Vec flatten() const;
  void assign(std::span<const double> flat);

  friend bool operator==(const MlrParams&, const MlrParams&) = default;
};

nlohmann::json to_json(const MlrParams& params);
MlrParams mlr_params_from_json(const nlohmann::json& j);

// Zero linear model, or a seeded hidden layer followed by a zero output layer.
MlrParams init_mlr(std::size_t input_dim, std::size_t categories, std::size_t hidden_units, RngSeed seed);

// Logits for every row of `inputs`.
Mat mlr_logits(const MlrParams& params, const Mat& inputs);
// p_c = sigmoid(logit_c). Throws DomainError on a dimension mismatch.
Vec predict(const MlrParams& params, std::span<const double> x);

struct MlrLoss {
  LossValue value;
  MlrParams grad;  // empty unless requested
};

MlrLoss mlr_batch_loss(const MlrParams& params, const Mat& inputs, const BatchTargets& targets,
                       const LossConfig& cfg, bool want_grad);

// Hard-label access for the training rows. Kept behind an interface so tests
// can count reads.
class LabelSource {
 public:
  virtual ~LabelSource() = default;
  virtual std::size_t rows() const = 0;
  virtual std::size_t categories() const = 0;
  virtual bool label(std::size_t row, std::size_t category) const = 0;
};

class MatrixLabels final : public LabelSource {
 public:
  explicit MatrixLabels(const LabelMatrix& labels) : labels_(labels) {}
  std::size_t rows() const override { return labels_.rows(); }
  std::size_t categories() const override { return labels_.cols(); }
  bool label(std::size_t row, std::size_t category) const override { return labels_(row, category); }

 private:
  const LabelMatrix& labels_;
};

// Soft targets aligned with the training rows.
struct SoftTargets {
  Mat ins;
  Mat pro;
};

struct FitResult {
  MlrParams params;
  Vec epoch_losses;  // mean batch loss per epoch
};

// Mini-batch gradient descent on the rows of `inputs`. dclr requires `soft`
// and then never calls `labels.label`. Throws TrainingError on divergence.
FitResult fit_mlr(const Mat& inputs, const LabelSource& labels, const SoftTargets* soft, const LossConfig& cfg,
                  const MlrHparams& h, RngSeed seed);

struct RunRecord {
  std::string loss;
  std::uint64_t seed = 0;
  Vec epoch_losses;
  CalibrationReport report;
  double seconds = 0.0;  // wall clock; kept out of the JSON record
};

// Deterministic part of the record: identical runs give identical bytes.
nlohmann::json to_json(const RunRecord& record);

struct SoftLabelPair {
  const SoftLabelMatrix* ins = nullptr;
  const SoftLabelMatrix* pro = nullptr;
};

struct TrainOutcome {
  MlrParams params;
  RunRecord record;
  PredictionLog test_log;
};

// Splits `ds`, fits on the training rows and evaluates on the held-out rows.
// dclr needs both soft-label matrices covering every training id (ConfigError
// otherwise). dwbl takes class counts from the training labels when none are
// configured.
TrainOutcome train_mlr(const Dataset& ds, const LossConfig& loss, SoftLabelPair soft, const MlrHparams& h,
                       RngSeed seed);

}  // namespace mlcc
