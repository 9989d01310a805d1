#pragma once

// Supervision zoo. Single-label calibration losses are lifted to multi-label
// output by treating every (sample, class) pair as one binary prediction.
//
// Row-level functions take probabilities; batch evaluation takes logits and
// returns the gradient with respect to them.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mlcc/datagen.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc {

enum class LossKind { nll, ls, mlls, fl, flsd, dca, mmce, mdca, mbls, dwbl, dclr };

std::string_view to_string(LossKind kind);
// Throws ConfigError for an unknown name.
LossKind parse_loss_kind(std::string_view name);
const std::vector<LossKind>& all_loss_kinds();

struct FlsdSchedule {
  double threshold = 0.2;
  double gamma_low = 5.0;   // used when p_t < threshold
  double gamma_high = 3.0;  // used otherwise
};

struct LossConfig {
  LossKind kind = LossKind::nll;
  double alpha = 0.05;
  double gamma = 2.0;
  FlsdSchedule flsd;
  double margin = 10.0;
  double kernel_width = 0.4;
  double aux_weight = 1.0;
  double beta = 0.9999;
  std::vector<double> class_counts;  // dwbl only
  double eta = 0.5;

  // Defaults for `kind` (mbls uses aux_weight 0.1).
  static LossConfig for_kind(LossKind kind);
  // Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);

struct LossValue {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> components;
  Mat grad;  // d total / d logits; empty unless requested
};

// -sum_c [y log p + (1 - y) log(1 - p)], p clamped to [1e-12, 1 - 1e-12].
double bce(std::span<const double> p, std::span<const double> y);
Vec bce_grad(std::span<const double> p, std::span<const double> y);

// Single-label smoothing applied per class: 1 - alpha / alpha / (C - 1).
Vec ls_targets(std::span<const std::uint8_t> y, double alpha);
// Multi-label smoothing: 1 - alpha / alpha M / (C - M). Throws DomainError
// when M == C.
Vec mlls_targets(std::span<const std::uint8_t> y, double alpha);

// sum_c -(1 - p_t)^gamma log p_t with p_t = p for positives, 1 - p otherwise.
double focal(std::span<const double> p, std::span<const double> y, double gamma);
double flsd_gamma(double p_t, const FlsdSchedule& schedule);
double flsd(std::span<const double> p, std::span<const double> y, const FlsdSchedule& schedule = {});

// Pooled-prediction confidence max(p, 1 - p) and correctness (p > 0.5) == y.
double dca_aux(const Mat& p, const LabelMatrix& y);
// Kernel calibration error sqrt(sum_ij e_i e_j k(r_i, r_j)) / n with
// e = correctness - confidence and k(a, b) = exp(-|a - b| / width).
double mmce_aux(const Mat& p, const LabelMatrix& y, double width);
// (1 / C) sum_c |mean_i p_ic - mean_i y_ic|.
double mdca_aux(const Mat& p, const LabelMatrix& y);
// sum_c max(0, max_k z_k - z_c - margin) for one logit row.
double margin_penalty(std::span<const double> logits, double margin);
double mbls(std::span<const double> logits, std::span<const double> y, double margin, double weight);
// Effective-number class weights (1 - beta) / (1 - beta^n_c), mean one.
Vec dwbl_weights(std::span<const double> class_counts, double beta);
double dwbl(std::span<const double> p, std::span<const double> y, std::span<const double> weights);

// eta * (bce(p, y_ins) + bce(p, y_pro)). `acl` is the same contract applied
// to the auxiliary classifier of the feature learner.
double dclr_cls(std::span<const double> p, std::span<const double> y_ins,
                std::span<const double> y_pro, double eta);
double acl(std::span<const double> p_hat, std::span<const double> y_ins,
           std::span<const double> y_pro, double eta);

// Targets for one batch. `hard` is always the 0/1 label matrix except for
// dclr, which reads `ins` and `pro` only.
struct BatchTargets {
  const LabelMatrix* hard = nullptr;
  const Mat* ins = nullptr;
  const Mat* pro = nullptr;
};

// Batch loss on logits (B x C): per-sample sums over classes averaged over
// the batch, plus the kind's auxiliary term.
LossValue evaluate_loss(const LossConfig& cfg, const Mat& logits, const BatchTargets& targets,
                        bool want_grad);

}  // namespace mlcc
