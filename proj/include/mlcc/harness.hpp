#pragma once

// Experiment plumbing shared by the CLI and the acceptance suite: the config
// manifest, the CSCL -> soft label -> benchmark pipeline, result tables and
// report files.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlcc/correlation.hpp"
#include "mlcc/cscl.hpp"
#include "mlcc/datagen.hpp"
#include "mlcc/losses.hpp"
#include "mlcc/metrics.hpp"
#include "mlcc/trainer.hpp"

namespace mlcc {

struct HarnessConfig {
  // Exactly one of the two dataset sources is used; a path wins.
  std::optional<std::filesystem::path> dataset_path;
  GenConfig dataset = GenConfig::default_preset();
  TrainConfig cscl;  // alpha, T and K come from the correlation section
  std::vector<LossConfig> roster = {LossConfig::for_kind(LossKind::nll), LossConfig::for_kind(LossKind::ls),
                                    LossConfig::for_kind(LossKind::dclr)};
  MlrHparams mlr;
  std::filesystem::path output = "out";
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  // Throws ConfigError. check_paths also requires dataset_path to exist.
  void validate(bool check_paths = true) const;
};

// Sections: dataset, cscl, correlation {alpha, T, K}, roster, mlr,
// metrics {bins, groups}, output, seeds. Missing sections keep defaults.
HarnessConfig harness_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HarnessConfig& cfg);
HarnessConfig load_harness_config(const std::filesystem::path& path);

struct StageOne {
  CsclResult cscl;  // bank covers the training split
  PrototypeBank prototypes;
  SoftLabelMatrix ins;
  SoftLabelMatrix pro;
};

// Soft labels of both kinds for every sample in `bank`. Prototypes are
// rebuilt from the bank.
StageOne soften_from_bank(CsclResult cscl, const TrainConfig& cfg);

// Trains the feature learner on the training split defined by `mlr` and
// derives both soft-label matrices for that split.
StageOne run_stage_one(const Dataset& ds, const TrainConfig& cfg, const MlrHparams& mlr);

// Spearman correlation between each row of the learned prototype-level
// category correlation and the planted similarity, off-diagonal entries only.
// NaN for a row where either side is constant.
Vec correlation_recovery(const StageOne& stage, const Mat& planted, const TrainConfig& cfg);

struct MetricSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  friend bool operator==(const MetricSummary&, const MetricSummary&) = default;
};

struct BenchmarkRow {
  std::string loss;
  std::size_t runs = 0;
  MetricSummary map, ace, ece, mce;

  friend bool operator==(const BenchmarkRow&, const BenchmarkRow&) = default;
};

struct BenchmarkTable {
  std::vector<BenchmarkRow> rows;
  friend bool operator==(const BenchmarkTable&, const BenchmarkTable&) = default;
};

// One row per distinct loss name, in first-appearance order of `records`,
// which are sorted by (roster position, seed) beforehand.
BenchmarkTable aggregate(const std::vector<RunRecord>& records);

std::string to_csv(const BenchmarkTable& table);
BenchmarkTable benchmark_table_from_csv(const std::string& text);
nlohmann::json to_json(const BenchmarkTable& table);
BenchmarkTable benchmark_table_from_json(const nlohmann::json& j);

struct BenchmarkResult {
  std::vector<RunRecord> records;  // sorted by (roster position, seed)
  BenchmarkTable table;
};

using RunCallback = std::function<void(const RunRecord&)>;

// Every (roster entry, seed) pair; the callback sees each finished run so a
// caller can persist partial results when a later run fails.
BenchmarkResult run_benchmark(const Dataset& ds, const std::vector<LossConfig>& roster, SoftLabelPair soft,
                              const MlrHparams& mlr, const std::vector<std::uint64_t>& seeds,
                              const RunCallback& on_run = {});

// Writes table.csv, table.json, runs/<loss>_<seed>.json (plus a timing
// sidecar) and reliability/<loss>_<seed>.{csv,svg}.
void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir);
void write_run(const RunRecord& record, const std::filesystem::path& dir);

// Reliability CSV/SVG for the global scope and every category.
void write_report(const CalibrationReport& report, const std::filesystem::path& dir);

// Static bar chart of mean accuracy per bin against the diagonal.
std::string reliability_svg(const ReliabilityTable& table, const std::string& title);

std::string scope_name(const ReliabilityTable& table);

}  // namespace mlcc
