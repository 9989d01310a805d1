#include "mlcc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

std::vector<PooledPrediction> pool(const PredictionLog& log, std::optional<std::size_t> category) {
  const std::size_t cats = log.probs.cols();
  if (category && *category >= cats) throw DomainError("pool: category out of range");
  std::vector<PooledPrediction> out;
  out.reserve(category ? log.size() : log.size() * cats);
  for (std::size_t i = 0; i < log.size(); ++i) {
    for (std::size_t c = 0; c < cats; ++c) {
      if (category && c != *category) continue;
      const double p = log.probs(i, c);
      out.push_back({std::max(p, 1.0 - p), (p > 0.5) == log.labels(i, c), log.ids[i], c});
    }
  }
  std::sort(out.begin(), out.end(), [](const PooledPrediction& a, const PooledPrediction& b) {
    if (a.confidence != b.confidence) return a.confidence < b.confidence;
    if (a.id != b.id) return a.id < b.id;
    return a.category < b.category;
  });
  return out;
}

std::size_t ReliabilityTable::total() const {
  std::size_t n = 0;
  for (const auto& b : bins) n += b.count;
  return n;
}

namespace {

// Means are accumulated on percent-scaled values; 100 * x is exact for the
// short decimals users write by hand, which keeps hand-checked cases exact.
struct Accumulator {
  std::size_t count = 0;
  double conf_pct = 0.0;
  double acc_pct = 0.0;

  void add(const PooledPrediction& p) {
    ++count;
    conf_pct += 100.0 * p.confidence;
    acc_pct += p.correct ? 100.0 : 0.0;
  }
  double mean_conf_pct() const { return conf_pct / static_cast<double>(count); }
  double mean_acc_pct() const { return acc_pct / static_cast<double>(count); }
  double gap_pct() const { return std::abs(mean_acc_pct() - mean_conf_pct()); }
};

std::size_t width_bin(double confidence, std::size_t bins) {
  const double pos = (confidence - 0.5) / 0.5 * static_cast<double>(bins);
  if (!(pos > 0.0)) return 0;
  return std::min(bins - 1, static_cast<std::size_t>(pos));
}

std::vector<Accumulator> width_accumulators(const std::vector<PooledPrediction>& pooled, std::size_t bins) {
  std::vector<Accumulator> acc(bins);
  for (const auto& p : pooled) acc[width_bin(p.confidence, bins)].add(p);
  return acc;
}

std::vector<Accumulator> mass_accumulators(const std::vector<PooledPrediction>& pooled, std::size_t groups,
                                           std::vector<std::pair<double, double>>* edges = nullptr) {
  std::vector<Accumulator> acc(groups);
  const std::size_t base = pooled.size() / groups;
  const std::size_t extra = pooled.size() % groups;
  std::size_t at = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t size = base + (g < extra ? 1 : 0);
    if (edges) edges->emplace_back(pooled[at].confidence, pooled[at + size - 1].confidence);
    for (std::size_t k = 0; k < size; ++k) acc[g].add(pooled[at + k]);
    at += size;
  }
  return acc;
}

std::vector<PooledPrediction> checked_pool(const PredictionLog& log, std::optional<std::size_t> category,
                                           const char* what) {
  auto pooled = pool(log, category);
  if (pooled.empty()) throw DomainError(std::string(what) + ": empty prediction log");
  return pooled;
}

}  // namespace

ReliabilityTable reliability(const PredictionLog& log, std::size_t bins, std::optional<std::size_t> category) {
  if (bins == 0) throw DomainError("reliability: need at least one bin");
  const auto pooled = checked_pool(log, category, "reliability");
  const auto acc = width_accumulators(pooled, bins);
  ReliabilityTable table{{}, BinScheme::equal_width, category};
  const double width = 0.5 / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    ReliabilityBin bin{0.5 + width * static_cast<double>(b), b + 1 == bins ? 1.0 : 0.5 + width * static_cast<double>(b + 1),
                       acc[b].count, 0.0, 0.0};
    if (acc[b].count) {
      bin.mean_conf = acc[b].mean_conf_pct() / 100.0;
      bin.mean_acc = acc[b].mean_acc_pct() / 100.0;
    }
    table.bins.push_back(bin);
  }
  return table;
}

ReliabilityTable equal_mass_groups(const PredictionLog& log, std::size_t groups,
                                   std::optional<std::size_t> category) {
  if (groups == 0) throw DomainError("ace: need at least one group");
  const auto pooled = checked_pool(log, category, "ace");
  if (pooled.size() < groups) {
    throw DomainError("ace: " + std::to_string(pooled.size()) + " predictions cannot fill " +
                      std::to_string(groups) + " groups");
  }
  std::vector<std::pair<double, double>> edges;
  const auto acc = mass_accumulators(pooled, groups, &edges);
  ReliabilityTable table{{}, BinScheme::equal_mass, category};
  for (std::size_t g = 0; g < groups; ++g) {
    table.bins.push_back({edges[g].first, edges[g].second, acc[g].count, acc[g].mean_conf_pct() / 100.0,
                          acc[g].mean_acc_pct() / 100.0});
  }
  return table;
}

double ece(const PredictionLog& log, std::size_t bins) {
  if (bins == 0) throw DomainError("ece: need at least one bin");
  const auto pooled = checked_pool(log, std::nullopt, "ece");
  const auto total = static_cast<double>(pooled.size());
  double out = 0.0;
  for (const auto& a : width_accumulators(pooled, bins)) {
    if (a.count) out += static_cast<double>(a.count) / total * a.gap_pct();
  }
  return out;
}

double mce(const PredictionLog& log, std::size_t bins) {
  if (bins == 0) throw DomainError("mce: need at least one bin");
  const auto pooled = checked_pool(log, std::nullopt, "mce");
  double out = 0.0;
  for (const auto& a : width_accumulators(pooled, bins)) {
    if (a.count) out = std::max(out, a.gap_pct());
  }
  return out;
}

double ace(const PredictionLog& log, std::size_t groups) {
  if (groups == 0) throw DomainError("ace: need at least one group");
  const auto pooled = checked_pool(log, std::nullopt, "ace");
  if (pooled.size() < groups) {
    throw DomainError("ace: " + std::to_string(pooled.size()) + " predictions cannot fill " +
                      std::to_string(groups) + " groups");
  }
  double out = 0.0;
  for (const auto& a : mass_accumulators(pooled, groups)) out += a.gap_pct();
  return out / static_cast<double>(groups);
}

double ece_from_table(const ReliabilityTable& table) {
  const auto total = static_cast<double>(table.total());
  if (total == 0.0) throw DomainError("ece_from_table: empty table");
  double out = 0.0;
  for (const auto& b : table.bins) {
    if (b.count) out += static_cast<double>(b.count) / total * std::abs(b.mean_acc - b.mean_conf) * 100.0;
  }
  return out;
}

double mce_from_table(const ReliabilityTable& table) {
  double out = 0.0;
  for (const auto& b : table.bins) {
    if (b.count) out = std::max(out, std::abs(b.mean_acc - b.mean_conf) * 100.0);
  }
  return out;
}

double ace_from_table(const ReliabilityTable& table) {
  if (table.bins.empty()) throw DomainError("ace_from_table: empty table");
  double out = 0.0;
  for (const auto& b : table.bins) out += std::abs(b.mean_acc - b.mean_conf) * 100.0;
  return out / static_cast<double>(table.bins.size());
}

MapResult mean_average_precision(const PredictionLog& log) {
  const std::size_t n = log.size();
  const std::size_t cats = log.probs.cols();
  MapResult out;
  out.ap.assign(cats, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> order(n);
  double sum = 0.0;
  std::size_t included = 0;
  for (std::size_t c = 0; c < cats; ++c) {
    if (log.labels.count_col(c) == 0) {
      out.excluded.push_back(c);
      continue;
    }
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (log.probs(a, c) != log.probs(b, c)) return log.probs(a, c) > log.probs(b, c);
      return log.ids[a] < log.ids[b];
    });
    double hits = 0.0, precision_sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (!log.labels(order[r], c)) continue;
      hits += 1.0;
      precision_sum += hits / static_cast<double>(r + 1);
    }
    out.ap[c] = precision_sum / hits;
    sum += out.ap[c];
    ++included;
  }
  if (included == 0) throw DomainError("map: no category has a positive sample");
  out.map = sum / static_cast<double>(included) * 100.0;
  return out;
}

double map(const PredictionLog& log) { return mean_average_precision(log).map; }

CalibrationReport evaluate(const PredictionLog& log, std::size_t bins, std::size_t groups) {
  CalibrationReport r;
  r.n_bins = bins;
  r.n_groups = groups;
  r.ece = ece(log, bins);
  r.mce = mce(log, bins);
  r.ace = ace(log, groups);
  const auto m = mean_average_precision(log);
  r.map = m.map;
  r.excluded_categories = m.excluded;
  r.global = reliability(log, bins);
  for (std::size_t c = 0; c < log.probs.cols(); ++c) r.per_category.push_back(reliability(log, bins, c));
  return r;
}

nlohmann::json to_json(const ReliabilityTable& table) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : table.bins) {
    bins.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_conf", b.mean_conf}, {"mean_acc", b.mean_acc}});
  }
  nlohmann::json scope = table.category ? nlohmann::json(*table.category) : nlohmann::json("global");
  return {{"scheme", table.scheme == BinScheme::equal_width ? "equal_width" : "equal_mass"},
          {"scope", scope},
          {"bins", bins}};
}

nlohmann::json to_json(const CalibrationReport& report) {
  return {{"ece", report.ece},         {"ace", report.ace},
          {"mce", report.mce},         {"map", report.map},
          {"n_bins", report.n_bins},   {"n_groups", report.n_groups},
          {"excluded_categories", report.excluded_categories},
          {"reliability", to_json(report.global)}};
}

std::string to_csv(const ReliabilityTable& table) {
  std::string out = "bin_lo,bin_hi,count,mean_conf,mean_acc\n";
  for (const auto& b : table.bins) {
    out += io::format_double(b.lo) + "," + io::format_double(b.hi) + "," + std::to_string(b.count) + "," +
           io::format_double(b.mean_conf) + "," + io::format_double(b.mean_acc) + "\n";
  }
  return out;
}

ReliabilityTable reliability_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  ReliabilityTable table;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != "bin_lo,bin_hi,count,mean_conf,mean_acc") throw ParseError("unexpected reliability header", 1);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) cells.push_back(cell);
    if (cells.size() != 5) throw ParseError("reliability row needs 5 fields", line_no);
    try {
      std::size_t used = 0;
      ReliabilityBin b;
      b.lo = std::stod(cells[0]);
      b.hi = std::stod(cells[1]);
      b.count = std::stoull(cells[2], &used);
      if (used != cells[2].size()) throw std::invalid_argument("count");
      b.mean_conf = std::stod(cells[3]);
      b.mean_acc = std::stod(cells[4]);
      table.bins.push_back(b);
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric reliability field", line_no);
    }
  }
  if (line_no == 0) throw ParseError("empty reliability file", 0);
  return table;
}

namespace {

Vec average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vec ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("spearman: length mismatch");
  if (a.size() < 2) throw DomainError("spearman: need at least two points");
  const Vec ra = average_ranks(a);
  const Vec rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DomainError("spearman: constant input");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace mlcc
