#include "mlcc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

namespace {

constexpr std::uint64_t kSoftRetrieveStream = 31;
constexpr std::uint64_t kSoftPrototypeStream = 32;

}  // namespace

void HarnessConfig::validate(bool check_paths) const {
  if (roster.empty()) throw ConfigError("config: loss roster is empty");
  if (seeds.empty()) throw ConfigError("config: seed list is empty");
  if (dataset_path) {
    if (check_paths && !std::filesystem::exists(*dataset_path)) {
      throw ConfigError("config: dataset " + dataset_path->string() + " does not exist");
    }
  } else {
    dataset.validate();
  }
  cscl.validate();
  mlr.validate();
  for (const auto& loss : roster) loss.validate();
}

HarnessConfig harness_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  HarnessConfig cfg;
  try {
    if (j.contains("dataset")) {
      const auto& d = j["dataset"];
      if (d.is_string()) {
        cfg.dataset_path = d.get<std::string>();
      } else if (d.contains("path")) {
        cfg.dataset_path = d["path"].get<std::string>();
      } else {
        cfg.dataset = gen_config_from_json(d);
      }
    }
    if (j.contains("cscl")) cfg.cscl = train_config_from_json(j["cscl"], cfg.cscl);
    if (j.contains("correlation")) {
      const auto& c = j["correlation"];
      cfg.cscl.alpha = c.value("alpha", cfg.cscl.alpha);
      cfg.cscl.retrieve = c.value("T", cfg.cscl.retrieve);
      cfg.cscl.prototypes = c.value("K", cfg.cscl.prototypes);
    }
    if (j.contains("roster")) {
      cfg.roster.clear();
      for (const auto& entry : j["roster"]) cfg.roster.push_back(loss_config_from_json(entry));
    }
    if (j.contains("mlr")) cfg.mlr = mlr_hparams_from_json(j["mlr"], cfg.mlr);
    if (j.contains("metrics")) {
      cfg.mlr.bins = j["metrics"].value("bins", cfg.mlr.bins);
      cfg.mlr.groups = j["metrics"].value("groups", cfg.mlr.groups);
    }
    if (j.contains("output")) cfg.output = j["output"].get<std::string>();
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate(false);
  return cfg;
}

nlohmann::json to_json(const HarnessConfig& cfg) {
  nlohmann::json roster = nlohmann::json::array();
  for (const auto& loss : cfg.roster) roster.push_back(to_json(loss));
  nlohmann::json j = {
      {"cscl", to_json(cfg.cscl)},
      {"correlation", {{"alpha", cfg.cscl.alpha}, {"T", cfg.cscl.retrieve}, {"K", cfg.cscl.prototypes}}},
      {"roster", roster},
      {"mlr", to_json(cfg.mlr)},
      {"metrics", {{"bins", cfg.mlr.bins}, {"groups", cfg.mlr.groups}}},
      {"output", cfg.output.string()},
      {"seeds", cfg.seeds}};
  j["dataset"] = cfg.dataset_path ? nlohmann::json{{"path", cfg.dataset_path->string()}} : to_json(cfg.dataset);
  return j;
}

HarnessConfig load_harness_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what(), 0);
  }
  return harness_config_from_json(j);
}

// ---- pipeline ----------------------------------------------------------------

StageOne soften_from_bank(CsclResult cscl, const TrainConfig& cfg) {
  StageOne out;
  out.cscl = std::move(cscl);
  const FeatureBank& bank = out.cscl.bank;
  out.prototypes = build_prototypes(bank, cfg.prototypes, derive_seed(cfg.seed, kSoftPrototypeStream), cfg.kmeans_iters);
  const RngSeed retrieve = derive_seed(cfg.seed, kSoftRetrieveStream);
  out.ins = soften_bank(bank, CorrelationKind::instance, cfg.alpha, cfg.retrieve, nullptr, retrieve);
  out.pro = soften_bank(bank, CorrelationKind::prototype, cfg.alpha, cfg.retrieve, &out.prototypes, retrieve);
  return out;
}

StageOne run_stage_one(const Dataset& ds, const TrainConfig& cfg, const MlrHparams& mlr) {
  const Split split = train_test_split(ds.size(), mlr.train_fraction, mlr.split_seed);
  const Dataset train = subset(ds, split.train);
  return soften_from_bank(train_cscl(train, cfg), cfg);
}

Vec correlation_recovery(const StageOne& stage, const Mat& planted, const TrainConfig& cfg) {
  const Mat learned = category_correlation(stage.cscl.bank, CorrelationKind::prototype, cfg.retrieve,
                                           &stage.prototypes, derive_seed(cfg.seed, kSoftRetrieveStream));
  const std::size_t cats = learned.rows();
  if (planted.rows() != cats || planted.cols() != cats) throw DomainError("correlation_recovery: shape mismatch");
  Vec out(cats, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < cats; ++c) {
    Vec a, b;
    for (std::size_t k = 0; k < cats; ++k) {
      if (k == c) continue;
      a.push_back(learned(c, k));
      b.push_back(planted(c, k));
    }
    try {
      out[c] = spearman(a, b);
    } catch (const DomainError&) {
      // constant row: leave NaN
    }
  }
  return out;
}

// ---- benchmark ---------------------------------------------------------------

namespace {

MetricSummary summarize(const std::vector<double>& v) {
  MetricSummary s{0.0, v.front(), v.front()};
  for (double x : v) {
    s.mean += x;
    s.min = std::min(s.min, x);
    s.max = std::max(s.max, x);
  }
  s.mean /= static_cast<double>(v.size());
  return s;
}

}  // namespace

BenchmarkTable aggregate(const std::vector<RunRecord>& records) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunRecord*>> by_loss;
  for (const auto& r : records) {
    if (!by_loss.count(r.loss)) order.push_back(r.loss);
    by_loss[r.loss].push_back(&r);
  }
  BenchmarkTable table;
  for (const auto& name : order) {
    std::vector<double> map, ace, ece, mce;
    for (const auto* r : by_loss[name]) {
      map.push_back(r->report.map);
      ace.push_back(r->report.ace);
      ece.push_back(r->report.ece);
      mce.push_back(r->report.mce);
    }
    table.rows.push_back({name, by_loss[name].size(), summarize(map), summarize(ace), summarize(ece), summarize(mce)});
  }
  return table;
}

namespace {

constexpr const char* kTableHeader =
    "loss,runs,map_mean,map_min,map_max,ace_mean,ace_min,ace_max,ece_mean,ece_min,ece_max,mce_mean,mce_min,mce_max";

void append_summary(std::string& out, const MetricSummary& s) {
  out += "," + io::format_double(s.mean) + "," + io::format_double(s.min) + "," + io::format_double(s.max);
}

nlohmann::json summary_json(const MetricSummary& s) { return {{"mean", s.mean}, {"min", s.min}, {"max", s.max}}; }

MetricSummary summary_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("min").get<double>(), j.at("max").get<double>()};
}

}  // namespace

std::string to_csv(const BenchmarkTable& table) {
  std::string out = std::string(kTableHeader) + "\n";
  for (const auto& row : table.rows) {
    out += row.loss + "," + std::to_string(row.runs);
    for (const auto* s : {&row.map, &row.ace, &row.ece, &row.mce}) append_summary(out, *s);
    out += "\n";
  }
  return out;
}

BenchmarkTable benchmark_table_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTableHeader) throw ParseError("unexpected benchmark table header", 1);
  BenchmarkTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (cells.size() != 14) throw ParseError("benchmark row needs 14 fields", line_no);
    try {
      BenchmarkRow r;
      r.loss = cells[0];
      r.runs = std::stoull(cells[1]);
      MetricSummary* targets[] = {&r.map, &r.ace, &r.ece, &r.mce};
      for (std::size_t m = 0; m < 4; ++m) {
        *targets[m] = {std::stod(cells[2 + 3 * m]), std::stod(cells[3 + 3 * m]), std::stod(cells[4 + 3 * m])};
      }
      table.rows.push_back(r);
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric benchmark field", line_no);
    }
  }
  return table;
}

nlohmann::json to_json(const BenchmarkTable& table) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : table.rows) {
    rows.push_back({{"loss", r.loss},
                    {"runs", r.runs},
                    {"map", summary_json(r.map)},
                    {"ace", summary_json(r.ace)},
                    {"ece", summary_json(r.ece)},
                    {"mce", summary_json(r.mce)}});
  }
  return {{"rows", rows}};
}

BenchmarkTable benchmark_table_from_json(const nlohmann::json& j) {
  try {
    BenchmarkTable table;
    for (const auto& r : j.at("rows")) {
      table.rows.push_back({r.at("loss").get<std::string>(), r.at("runs").get<std::size_t>(),
                            summary_from_json(r.at("map")), summary_from_json(r.at("ace")),
                            summary_from_json(r.at("ece")), summary_from_json(r.at("mce"))});
    }
    return table;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("benchmark table: ") + e.what());
  }
}

BenchmarkResult run_benchmark(const Dataset& ds, const std::vector<LossConfig>& roster, SoftLabelPair soft,
                              const MlrHparams& mlr, const std::vector<std::uint64_t>& seeds,
                              const RunCallback& on_run) {
  if (roster.empty()) throw ConfigError("benchmark: loss roster is empty");
  if (seeds.empty()) throw ConfigError("benchmark: seed list is empty");
  std::vector<std::uint64_t> sorted_seeds = seeds;
  std::sort(sorted_seeds.begin(), sorted_seeds.end());
  BenchmarkResult result;
  for (const auto& loss : roster) {
    for (std::uint64_t seed : sorted_seeds) {
      TrainOutcome outcome = train_mlr(ds, loss, soft, mlr, RngSeed{seed});
      if (on_run) on_run(outcome.record);
      result.records.push_back(std::move(outcome.record));
    }
  }
  result.table = aggregate(result.records);
  return result;
}

std::string scope_name(const ReliabilityTable& table) {
  return table.category ? "c" + std::to_string(*table.category) : "global";
}

void write_run(const RunRecord& record, const std::filesystem::path& dir) {
  const std::string stem = record.loss + "_" + std::to_string(record.seed);
  io::write_text(dir / "runs" / (stem + ".json"), to_json(record).dump(2) + "\n");
  io::write_text(dir / "runs" / (stem + ".timing.json"),
                 nlohmann::json{{"seconds", record.seconds}}.dump() + "\n");
  io::write_text(dir / "reliability" / (stem + ".csv"), to_csv(record.report.global));
  io::write_text(dir / "reliability" / (stem + ".svg"), reliability_svg(record.report.global, stem));
}

void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir) {
  for (const auto& r : result.records) write_run(r, dir);
  io::write_text(dir / "table.csv", to_csv(result.table));
  io::write_text(dir / "table.json", to_json(result.table).dump(2) + "\n");
}

void write_report(const CalibrationReport& report, const std::filesystem::path& dir) {
  io::write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  const auto emit = [&](const ReliabilityTable& t) {
    const std::string name = scope_name(t);
    io::write_text(dir / "reliability" / (name + ".csv"), to_csv(t));
    io::write_text(dir / "reliability" / (name + ".svg"), reliability_svg(t, name));
  };
  emit(report.global);
  for (const auto& t : report.per_category) emit(t);
}

std::string reliability_svg(const ReliabilityTable& table, const std::string& title) {
  // Plot area: confidence [0.5, 1] on x, accuracy [0, 1] on y.
  constexpr double kSize = 320.0, kPad = 40.0;
  const auto px = [&](double conf) { return kPad + (conf - 0.5) / 0.5 * kSize; };
  const auto py = [&](double acc) { return kPad + (1.0 - acc) * kSize; };
  char buf[512];
  std::string svg;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n"
                "<rect width=\"100%%\" height=\"100%%\" fill=\"white\"/>\n"
                "<text x=\"%.0f\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">%s</text>\n",
                kSize + 2 * kPad, kSize + 2 * kPad, kPad, title.c_str());
  svg += buf;
  for (const auto& b : table.bins) {
    if (b.count == 0) continue;
    const double x0 = px(std::max(b.lo, 0.5)), x1 = px(b.hi);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#4a78b5\" stroke=\"#1d3d66\"/>\n",
                  x0, py(b.mean_acc), x1 - x0, py(0.0) - py(b.mean_acc));
    svg += buf;
    const double top = std::max(b.mean_acc, b.mean_conf), bottom = std::min(b.mean_acc, b.mean_conf);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#d9534f\" fill-opacity=\"0.35\"/>\n",
                  x0, py(top), x1 - x0, py(bottom) - py(top));
    svg += buf;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n"
                "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"none\" stroke=\"black\"/>\n"
                "<text x=\"%.2f\" y=\"%.2f\" font-family=\"sans-serif\" font-size=\"11\">confidence 0.5 .. 1</text>\n"
                "</svg>\n",
                px(0.5), py(0.5), px(1.0), py(1.0), kPad, kPad, kSize, kSize, kPad, kSize + kPad + 16);
  svg += buf;
  return svg;
}

}  // namespace mlcc
