// mlcc: data generation, feature learning, soft labels, stage-2 training,
// evaluation and the benchmark matrix.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage/config/input error.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mlcc/correlation.hpp"
#include "mlcc/cscl.hpp"
#include "mlcc/datagen.hpp"
#include "mlcc/error.hpp"
#include "mlcc/harness.hpp"
#include "mlcc/io.hpp"
#include "mlcc/metrics.hpp"
#include "mlcc/trainer.hpp"

namespace fs = std::filesystem;
using namespace mlcc;

namespace {

bool use_color() {
  const char* v = std::getenv("MLCC_NO_COLOR");
  return !(v && *v && std::string(v) != "0");
}

std::string paint(const std::string& text, const char* code) {
  return use_color() ? std::string("\033[") + code + "m" + text + "\033[0m" : text;
}

// Flags shared by several subcommands. Unset optionals leave config values.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> bins;
  std::optional<double> alpha;
  std::optional<std::size_t> k;
  std::optional<std::size_t> t;
  std::string loss;
  std::optional<std::uint64_t> split_seed;
};

void add_common(CLI::App* cmd, Common& c, bool model_flags) {
  cmd->add_option("--config", c.config, "JSON experiment manifest")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--bins", c.bins, "calibration bins (default 15)")->check(CLI::PositiveNumber);
  if (model_flags) {
    cmd->add_option("--alpha", c.alpha, "soft-label mass (default 0.05)");
    cmd->add_option("--k", c.k, "prototypes per category (default 10)")->check(CLI::PositiveNumber);
    cmd->add_option("--t", c.t, "retrieved samples per category (default 4)")->check(CLI::PositiveNumber);
    cmd->add_option("--split-seed", c.split_seed, "seed of the train/test split (default 0)");
  }
}

HarnessConfig resolve(const Common& c) {
  HarnessConfig cfg = c.config.empty() ? HarnessConfig{} : load_harness_config(c.config);
  if (c.alpha) cfg.cscl.alpha = *c.alpha;
  if (c.k) cfg.cscl.prototypes = *c.k;
  if (c.t) cfg.cscl.retrieve = *c.t;
  if (c.bins) cfg.mlr.bins = *c.bins;
  if (c.split_seed) cfg.mlr.split_seed = RngSeed{*c.split_seed};
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

Dataset load_data(const std::string& flag, const HarnessConfig& cfg) {
  fs::path path;
  if (!flag.empty()) {
    path = flag;
  } else if (cfg.dataset_path) {
    path = *cfg.dataset_path;
  } else {
    throw ConfigError("no dataset given (use --data or a config with dataset.path)");
  }
  if (fs::is_directory(path)) path /= "dataset.jsonl";
  if (!fs::exists(path)) throw ConfigError("dataset " + path.string() + " does not exist");
  return load_dataset(path);
}

void print_summary(const Dataset& ds) {
  double positives = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n) positives += static_cast<double>(ds.labels.count_row(n));
  std::printf("N=%zu C=%zu D=%zu mean positives=%.4f\n", ds.size(), ds.categories(), ds.inputs.cols(),
              ds.size() ? positives / static_cast<double>(ds.size()) : 0.0);
}

void print_report(const CalibrationReport& r) {
  std::printf("%s  mAP %.4f  ACE %.4f  ECE %.4f  MCE %.4f  (B=%zu, R=%zu)\n", paint("report", "1").c_str(), r.map,
              r.ace, r.ece, r.mce, r.n_bins, r.n_groups);
  if (!r.excluded_categories.empty()) {
    std::string list;
    for (auto c : r.excluded_categories) list += (list.empty() ? "" : ",") + std::to_string(c);
    std::printf("excluded from mAP (no positives): %s\n", list.c_str());
  }
}

// ---- gen ----------------------------------------------------------------------

struct GenArgs {
  std::optional<std::string> preset;
  std::optional<std::size_t> categories, dim, samples;
  std::optional<double> avg_labels, noise;
};

int cmd_gen(const Common& c, const GenArgs& a) {
  HarnessConfig h = resolve(c);
  GenConfig g = a.preset || c.config.empty() ? GenConfig::preset(a.preset.value_or("default")) : h.dataset;
  if (a.categories) g.categories = *a.categories;
  if (a.dim) g.dim = *a.dim;
  if (a.samples) g.samples = *a.samples;
  if (a.avg_labels) g.avg_labels = *a.avg_labels;
  if (a.noise) g.noise_sigma = *a.noise;
  if (c.seed) g.seed = RngSeed{*c.seed};
  g.validate();
  const Dataset ds = generate(g);
  const fs::path out = c.out.empty() ? fs::path("data") : fs::path(c.out);
  save_dataset(ds, out / "dataset.jsonl");
  print_summary(ds);
  std::printf("wrote %s\n", (out / "dataset.jsonl").string().c_str());
  return 0;
}

// ---- train-cscl / soften --------------------------------------------------------

struct CsclArgs {
  std::string data;
  std::optional<std::size_t> epochs;
  bool no_contrastive = false;
};

void write_soft(const StageOne& st, const fs::path& out) {
  save_soft_labels(st.ins, out / "soft_ins.jsonl");
  save_soft_labels(st.pro, out / "soft_pro.jsonl");
}

int cmd_train_cscl(const Common& c, const CsclArgs& a) {
  HarnessConfig h = resolve(c);
  if (c.seed) h.cscl.seed = RngSeed{*c.seed};
  if (a.epochs) h.cscl.epochs = *a.epochs;
  if (a.no_contrastive) h.cscl.use_contrastive = false;
  h.cscl.validate();
  const Dataset ds = load_data(a.data, h);
  const StageOne st = run_stage_one(ds, h.cscl, h.mlr);
  const fs::path out = h.output;
  io::write_text(out / "extractor.json", to_json(st.cscl.params).dump() + "\n");
  save_feature_bank(st.cscl.bank, out / "bank.jsonl");
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& e : st.cscl.history) {
    hist.push_back({{"acl", e.acl}, {"contrastive", e.contrastive}, {"total", e.total}});
  }
  io::write_text(out / "cscl.json", nlohmann::json{{"config", to_json(h.cscl)}, {"history", hist}}.dump(2) + "\n");
  write_soft(st, out);
  for (std::size_t e = 0; e < st.cscl.history.size(); ++e) {
    std::printf("epoch %zu  acl %.6f  contrastive %.6f\n", e + 1, st.cscl.history[e].acl,
                st.cscl.history[e].contrastive);
  }
  std::printf("wrote soft labels for %zu training samples to %s\n", st.ins.ids.size(), out.string().c_str());
  return 0;
}

struct SoftenArgs {
  std::string data, bank;
};

int cmd_soften(const Common& c, const SoftenArgs& a) {
  HarnessConfig h = resolve(c);
  if (c.seed) h.cscl.seed = RngSeed{*c.seed};
  h.cscl.validate();
  const Dataset ds = load_data(a.data, h);
  if (!fs::exists(a.bank)) throw ConfigError("feature bank " + a.bank + " does not exist");
  CsclResult r;
  r.bank = load_feature_bank(a.bank, ds);
  const StageOne st = soften_from_bank(std::move(r), h.cscl);
  write_soft(st, h.output);
  std::printf("wrote soft labels for %zu samples to %s\n", st.ins.ids.size(), h.output.string().c_str());
  return 0;
}

// ---- train-mlr / eval --------------------------------------------------------------

struct MlrArgs {
  std::string data, soft_dir;
  std::optional<std::size_t> epochs, hidden;
  std::optional<double> lr;
};

struct SoftFiles {
  std::optional<SoftLabelMatrix> ins, pro;
  SoftLabelPair pair() const { return {ins ? &*ins : nullptr, pro ? &*pro : nullptr}; }
};

SoftFiles load_soft(const std::string& dir) {
  SoftFiles s;
  if (dir.empty()) return s;
  const fs::path d(dir);
  if (!fs::exists(d / "soft_ins.jsonl") || !fs::exists(d / "soft_pro.jsonl")) {
    throw ConfigError("soft-label directory " + dir + " needs soft_ins.jsonl and soft_pro.jsonl");
  }
  s.ins = load_soft_labels(d / "soft_ins.jsonl");
  s.pro = load_soft_labels(d / "soft_pro.jsonl");
  if (s.ins->kind != CorrelationKind::instance || s.pro->kind != CorrelationKind::prototype) {
    throw SchemaError("soft-label files hold the wrong kinds");
  }
  return s;
}

void apply_mlr_args(HarnessConfig& h, const MlrArgs& a) {
  if (a.epochs) h.mlr.epochs = *a.epochs;
  if (a.hidden) h.mlr.hidden_units = *a.hidden;
  if (a.lr) h.mlr.learning_rate = *a.lr;
}

int cmd_train_mlr(const Common& c, const MlrArgs& a) {
  HarnessConfig h = resolve(c);
  apply_mlr_args(h, a);
  const LossConfig loss = c.loss.empty() ? h.roster.front() : LossConfig::for_kind(parse_loss_kind(c.loss));
  loss.validate();
  const Dataset ds = load_data(a.data, h);
  const SoftFiles soft = load_soft(a.soft_dir);
  const std::uint64_t seed = c.seed.value_or(h.seeds.front());
  const TrainOutcome t = train_mlr(ds, loss, soft.pair(), h.mlr, RngSeed{seed});
  const std::string stem = t.record.loss + "_" + std::to_string(seed);
  write_run(t.record, h.output);
  io::write_text(h.output / "params" / (stem + ".json"), to_json(t.params).dump() + "\n");
  save_prediction_log(t.test_log, h.output / "predictions" / (stem + ".jsonl"));
  print_report(t.record.report);
  return 0;
}

struct EvalArgs {
  std::string log;
  std::optional<std::size_t> groups;
};

int cmd_eval(const Common& c, const EvalArgs& a) {
  HarnessConfig h = resolve(c);
  if (a.groups) h.mlr.groups = *a.groups;
  if (!fs::exists(a.log)) throw ConfigError("prediction log " + a.log + " does not exist");
  const PredictionLog log = load_prediction_log(a.log);
  const CalibrationReport r = evaluate(log, h.mlr.bins, h.mlr.groups);
  write_report(r, c.out.empty() ? fs::path("eval") : fs::path(c.out));
  print_report(r);
  return 0;
}

// ---- benchmark / report --------------------------------------------------------------

struct BenchArgs {
  std::string data, soft_dir;
  std::vector<std::string> losses;
  std::vector<std::uint64_t> seeds;
  MlrArgs mlr;
};

void print_table(const BenchmarkTable& table) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    if (table.rows[i].ece.mean < table.rows[best].ece.mean) best = i;
  }
  std::printf("%s\n", paint("loss      runs   mAP            ACE            ECE            MCE", "1").c_str());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& r = table.rows[i];
    char line[256];
    std::snprintf(line, sizeof line, "%-8s  %4zu   %6.3f +-%5.3f  %6.3f +-%5.3f  %6.3f +-%5.3f  %6.3f +-%5.3f", r.loss.c_str(),
                  r.runs, r.map.mean, (r.map.max - r.map.min) / 2, r.ace.mean, (r.ace.max - r.ace.min) / 2, r.ece.mean,
                  (r.ece.max - r.ece.min) / 2, r.mce.mean, (r.mce.max - r.mce.min) / 2);
    std::printf("%s\n", i == best ? paint(line, "32").c_str() : line);
  }
}

int cmd_benchmark(const Common& c, const BenchArgs& a) {
  HarnessConfig h = resolve(c);
  apply_mlr_args(h, a.mlr);
  if (!a.losses.empty()) {
    h.roster.clear();
    for (const auto& name : a.losses) h.roster.push_back(LossConfig::for_kind(parse_loss_kind(name)));
  }
  if (!a.seeds.empty()) {
    h.seeds = a.seeds;
  } else if (c.seed) {
    h.seeds = {*c.seed};
  }
  if (c.seed) h.cscl.seed = RngSeed{*c.seed};
  if (!a.data.empty()) h.dataset_path = a.data;
  h.validate();

  Dataset ds;
  if (h.dataset_path) {
    ds = load_data({}, h);
  } else {
    if (c.seed) h.dataset.seed = RngSeed{*c.seed};
    ds = generate(h.dataset);
  }

  SoftFiles soft = load_soft(a.soft_dir);
  const bool needs_soft = std::any_of(h.roster.begin(), h.roster.end(),
                                      [](const LossConfig& l) { return l.kind == LossKind::dclr; });
  if (needs_soft && !soft.ins) {
    std::printf("training the feature learner for dclr soft labels...\n");
    StageOne st = run_stage_one(ds, h.cscl, h.mlr);
    write_soft(st, h.output);
    soft.ins = std::move(st.ins);
    soft.pro = std::move(st.pro);
  }

  std::vector<RunRecord> done;
  try {
    const BenchmarkResult result = run_benchmark(ds, h.roster, soft.pair(), h.mlr, h.seeds, [&](const RunRecord& r) {
      done.push_back(r);
      std::printf("  %-6s seed %-4llu  ECE %.4f  mAP %.4f\n", r.loss.c_str(), static_cast<unsigned long long>(r.seed),
                  r.report.ece, r.report.map);
      std::fflush(stdout);
    });
    write_benchmark(result, h.output);
    io::write_text(h.output / "config.json", to_json(h).dump(2) + "\n");
    print_table(result.table);
  } catch (const Error&) {
    nlohmann::json partial = nlohmann::json::array();
    for (const auto& r : done) partial.push_back(to_json(r));
    io::write_text(h.output / "partial.json", partial.dump(2) + "\n");
    std::fprintf(stderr, "benchmark aborted after %zu runs; partial results in %s\n", done.size(),
                 (h.output / "partial.json").string().c_str());
    throw;
  }
  return 0;
}

int cmd_report(const Common& c, const std::string& dir) {
  const fs::path d = dir.empty() ? fs::path(c.out.empty() ? "out" : c.out) : fs::path(dir);
  const fs::path table_path = d / "table.json";
  if (!fs::exists(table_path)) throw ConfigError("no table.json in " + d.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(table_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(table_path.string() + ": " + e.what(), 0);
  }
  print_table(benchmark_table_from_json(j));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-label confidence calibration toolkit"};
  app.require_subcommand(1);
  Common common;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  GenArgs gen_args;
  add_common(gen, common, false);
  gen->add_option("--preset", gen_args.preset, "default | tiny");
  gen->add_option("--categories", gen_args.categories, "number of categories C");
  gen->add_option("--dim", gen_args.dim, "input dimension D");
  gen->add_option("--samples", gen_args.samples, "number of samples N");
  gen->add_option("--avg-labels", gen_args.avg_labels, "mean positives per sample");
  gen->add_option("--noise", gen_args.noise, "input noise sigma");

  auto* cscl = app.add_subcommand("train-cscl", "train the feature learner and emit soft labels");
  CsclArgs cscl_args;
  add_common(cscl, common, true);
  cscl->add_option("--data", cscl_args.data, "dataset file or directory");
  cscl->add_option("--epochs", cscl_args.epochs, "training epochs");
  cscl->add_flag("--no-contrastive", cscl_args.no_contrastive, "drop the contrastive term");

  auto* soften_cmd = app.add_subcommand("soften", "soft labels from a saved feature bank");
  SoftenArgs soften_args;
  add_common(soften_cmd, common, true);
  soften_cmd->add_option("--data", soften_args.data, "dataset file or directory");
  soften_cmd->add_option("--bank", soften_args.bank, "feature bank (bank.jsonl)")->required();

  MlrArgs mlr_args;
  auto* mlr = app.add_subcommand("train-mlr", "train and evaluate one stage-2 classifier");
  add_common(mlr, common, true);
  mlr->add_option("--loss", common.loss, "loss kind");
  mlr->add_option("--data", mlr_args.data, "dataset file or directory");
  mlr->add_option("--soft-dir", mlr_args.soft_dir, "directory with soft_ins.jsonl and soft_pro.jsonl");
  mlr->add_option("--epochs", mlr_args.epochs, "training epochs");
  mlr->add_option("--hidden", mlr_args.hidden, "hidden units (0 = linear)");
  mlr->add_option("--lr", mlr_args.lr, "learning rate");

  auto* eval = app.add_subcommand("eval", "calibration report for a prediction log");
  EvalArgs eval_args;
  add_common(eval, common, false);
  eval->add_option("--log", eval_args.log, "prediction log (JSON lines)")->required();
  eval->add_option("--groups", eval_args.groups, "equal-mass groups for ACE (default 15)");

  auto* bench = app.add_subcommand("benchmark", "loss roster x seeds benchmark table");
  BenchArgs bench_args;
  add_common(bench, common, true);
  bench->add_option("--data", bench_args.data, "dataset file or directory");
  bench->add_option("--soft-dir", bench_args.soft_dir, "directory with precomputed soft labels");
  bench->add_option("--losses", bench_args.losses, "loss kinds")->delimiter(',');
  bench->add_option("--seeds", bench_args.seeds, "seeds")->delimiter(',');
  bench->add_option("--epochs", bench_args.mlr.epochs, "training epochs");
  bench->add_option("--hidden", bench_args.mlr.hidden, "hidden units (0 = linear)");
  bench->add_option("--lr", bench_args.mlr.lr, "learning rate");

  auto* report = app.add_subcommand("report", "print a benchmark table");
  std::string report_dir;
  add_common(report, common, false);
  report->add_option("dir", report_dir, "benchmark output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(common, gen_args);
    if (*cscl) return cmd_train_cscl(common, cscl_args);
    if (*soften_cmd) return cmd_soften(common, soften_args);
    if (*mlr) return cmd_train_mlr(common, mlr_args);
    if (*eval) return cmd_eval(common, eval_args);
    if (*bench) return cmd_benchmark(common, bench_args);
    if (*report) return cmd_report(common, report_dir);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s %s\n", paint("config error:", "31").c_str(), e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "%s %s\n", paint("input error:", "31").c_str(), e.what());
    return 2;
  } catch (const SchemaError& e) {
    std::fprintf(stderr, "%s %s\n", paint("input error:", "31").c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s %s\n", paint("error:", "31").c_str(), e.what());
    return 1;
  }
  return 2;
}
