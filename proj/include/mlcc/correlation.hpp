#pragma once

// Instance- and prototype-level category correlation and the correlation-aware
// soft labels built from them.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "mlcc/datagen.hpp"
#include "mlcc/feature_bank.hpp"
#include "mlcc/numkit.hpp"

namespace mlcc {

enum class CorrelationKind { instance, prototype };

std::string_view to_string(CorrelationKind kind);  // "ins" / "pro"

// C x C, zero diagonal, nonnegative, rows sum to one.
struct CorrelationMatrix {
  Mat values;
  CorrelationKind kind = CorrelationKind::instance;
};

struct PrototypeBank {
  std::size_t requested_k = 0;
  std::vector<Mat> prototypes;  // per category, K_c x D_f
  std::vector<std::size_t> clamped;  // categories with fewer than requested_k positives

  std::size_t categories() const noexcept { return prototypes.size(); }
  bool uniform() const noexcept { return clamped.empty(); }
};

struct SoftLabelMatrix {
  std::vector<std::int64_t> ids;
  Mat values;  // N x C
  double alpha = 0.0;
  CorrelationKind kind = CorrelationKind::instance;
  Vec overwrite_mass;  // per row: mass the positive overwrite discarded
};

// Cosine similarity, except that a zero-norm vector (a fully inactive relu
// feature) contributes 0 instead of raising.
double similarity_or_zero(std::span<const double> u, std::span<const double> v);

// Masks the diagonal and row-softmaxes a raw C x C similarity matrix.
CorrelationMatrix normalize_correlation(const Mat& raw, CorrelationKind kind);

// Raw entry (c, c') sums the similarity between query row c and the c'
// features of T samples drawn uniformly from the positives of c' (with
// replacement when fewer than T exist). One draw per c' is shared by every
// row. Throws DomainError naming a category with no positives.
CorrelationMatrix instance_corr(const Mat& query, const FeatureBank& bank, std::size_t retrieve,
                                RngSeed seed);

// K-means over each category's positive features. K is clamped per category
// to its number of positives, and such categories are listed in `clamped`.
PrototypeBank build_prototypes(const FeatureBank& bank, std::size_t k, RngSeed seed,
                               std::size_t max_iters = 25);

// Raw entry (c, c') sums similarity between query row c and the prototypes of
// c' (averages them when some category was clamped).
CorrelationMatrix proto_corr(const Mat& query, const PrototypeBank& protos);

struct SoftRow {
  Vec values;
  double overwrite_mass = 0.0;
};

// Positives get 1 - alpha, a negative c gets sum_k alpha * R[k][c] * y_k.
// Throws DomainError for an all-negative row, alpha outside [0, 1) or a
// shape mismatch.
SoftRow soften(std::span<const std::uint8_t> labels, const CorrelationMatrix& corr, double alpha);

// Soft labels for every bank sample, querying with the sample's own bank
// features. Instance retrieval for sample n is seeded by derive_seed(seed, id).
SoftLabelMatrix soften_bank(const FeatureBank& bank, CorrelationKind kind, double alpha,
                            std::size_t retrieve, const PrototypeBank* protos, RngSeed seed);

// Category-level view of the per-sample matrices: row c averages row c of
// R_m over the samples m that are positive for c.
Mat category_correlation(const FeatureBank& bank, CorrelationKind kind, std::size_t retrieve,
                         const PrototypeBank* protos, RngSeed seed);

// JSON-lines {"id","kind","y_soft","overwrite_mass"}.
void save_soft_labels(const SoftLabelMatrix& soft, const std::filesystem::path& path);
SoftLabelMatrix load_soft_labels(const std::filesystem::path& path);

}  // namespace mlcc
