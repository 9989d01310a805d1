#include "mlcc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

std::size_t LabelMatrix::count_row(std::size_t r) const {
  const auto bits = row(r);
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::size_t LabelMatrix::count_col(std::size_t c) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows_; ++r) n += (*this)(r, c) ? 1 : 0;
  return n;
}

Mat LabelMatrix::as_mat() const {
  Mat m(rows_, cols_);
  for (std::size_t i = 0; i < bits_.size(); ++i) m.data()[i] = bits_[i];
  return m;
}

void GenConfig::validate() const {
  if (categories < 1) throw ConfigError("categories must be >= 1");
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (dim < categories) {
    throw ConfigError("input dimension " + std::to_string(dim) + " is smaller than category count " +
                      std::to_string(categories));
  }
  if (categories > 1 && !(avg_labels >= 1.0 && avg_labels < static_cast<double>(categories))) {
    throw ConfigError("avg_labels must satisfy 1 <= avg_labels < categories (got " +
                      io::format_double(avg_labels) + " with " + std::to_string(categories) +
                      " categories)");
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
  if (!(block_bias >= 0.0 && block_bias <= 1.0)) throw ConfigError("block_bias must be in [0, 1]");
  for (const auto& b : blocks) {
    if (b.members.empty()) throw ConfigError("similarity block without members");
    if (!(b.similarity >= 0.0)) throw ConfigError("block similarity must be >= 0");
    if (b.similarity >= 1.0) {
      throw ConfigError("block similarity " + io::format_double(b.similarity) + " is infeasible (must be < 1)");
    }
    std::vector<std::size_t> sorted = b.members;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("duplicate member in similarity block");
    }
    if (sorted.back() >= categories) throw ConfigError("block member out of range");
  }
}

GenConfig GenConfig::default_preset() {
  GenConfig cfg;
  auto range = [](std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> v(hi - lo);
    std::iota(v.begin(), v.end(), lo);
    return v;
  };
  cfg.blocks = {
      {range(0, 10), 0.3}, {range(10, 20), 0.3}, {range(0, 5), 0.7},
      {range(5, 10), 0.7}, {range(10, 15), 0.7}, {range(15, 20), 0.7},
  };
  return cfg;
}

GenConfig GenConfig::tiny_preset() {
  GenConfig cfg;
  cfg.categories = 6;
  cfg.dim = 12;
  cfg.samples = 300;
  cfg.avg_labels = 2.0;
  cfg.noise_sigma = 0.5;
  cfg.blocks = {{{0, 1, 2}, 0.6}, {{3, 4, 5}, 0.6}};
  return cfg;
}

GenConfig GenConfig::preset(const std::string& name) {
  if (name == "default") return default_preset();
  if (name == "tiny") return tiny_preset();
  throw ConfigError("unknown preset '" + name + "' (expected default or tiny)");
}

Mat planted_similarity(const GenConfig& config) {
  const std::size_t c = config.categories;
  Mat s(c, c);
  for (std::size_t i = 0; i < c; ++i) s(i, i) = 1.0;
  for (const auto& b : config.blocks) {
    for (std::size_t a : b.members) {
      for (std::size_t o : b.members) {
        if (a != o) s(a, o) = std::max(s(a, o), b.similarity);
      }
    }
  }
  return s;
}

namespace {

// Lower-triangular L with L L^T = s; ConfigError when s is not positive
// definite.
Mat cholesky(const Mat& s) {
  const std::size_t n = s.rows();
  Mat l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = s(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= 1e-12) {
          throw ConfigError("planted similarity structure is not realizable (indefinite at category " +
                            std::to_string(i) + ")");
        }
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return l;
}

// D x C matrix with orthonormal columns from seeded Gaussian draws
// (modified Gram-Schmidt, redrawing any degenerate column).
Mat random_frame(std::size_t dim, std::size_t count, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat q(count, dim);  // stored as rows for contiguous access
  for (std::size_t j = 0; j < count; ++j) {
    auto col = q.row(j);
    for (;;) {
      for (double& v : col) v = gauss(rng);
      for (std::size_t k = 0; k < j; ++k) {
        const double proj = dot(col, q.row(k));
        auto prev = q.row(k);
        for (std::size_t d = 0; d < dim; ++d) col[d] -= proj * prev[d];
      }
      const double n = norm(col);
      if (n > 1e-8) {
        for (double& v : col) v /= n;
        break;
      }
    }
  }
  return q;
}

}  // namespace

Mat plant_means(const GenConfig& config) {
  config.validate();
  const Mat target = planted_similarity(config);
  const Mat l = cholesky(target);
  Rng rng = make_rng(derive_seed(config.seed, 1));
  const Mat frame = random_frame(config.dim, config.categories, rng);

  Mat means(config.categories, config.dim);
  for (std::size_t c = 0; c < config.categories; ++c) {
    auto mu = means.row(c);
    for (std::size_t j = 0; j <= c; ++j) {
      const auto axis = frame.row(j);
      for (std::size_t d = 0; d < config.dim; ++d) mu[d] += l(c, j) * axis[d];
    }
  }
  return means;
}

namespace {

LabelMatrix sample_labels(const GenConfig& config) {
  const std::size_t cats = config.categories;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<double> weights;
  for (const auto& b : config.blocks) {
    groups.push_back(b.members);
    weights.push_back(static_cast<double>(b.members.size()));
  }
  if (groups.empty()) {
    groups.emplace_back(cats);
    std::iota(groups.back().begin(), groups.back().end(), 0);
    weights.push_back(1.0);
  }

  Rng rng = make_rng(derive_seed(config.seed, 2));
  std::discrete_distribution<std::size_t> pick_group(weights.begin(), weights.end());
  std::poisson_distribution<int> count_dist(config.avg_labels);
  std::bernoulli_distribution in_block(config.block_bias);

  LabelMatrix labels(config.samples, cats);
  std::vector<char> member(cats);
  std::vector<std::size_t> inside, outside;
  for (std::size_t n = 0; n < config.samples; ++n) {
    const auto& group = groups[pick_group(rng)];
    std::fill(member.begin(), member.end(), 0);
    for (std::size_t c : group) member[c] = 1;
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(count_dist(rng)), 1, cats);
    for (std::size_t drawn = 0; drawn < count; ++drawn) {
      inside.clear();
      outside.clear();
      for (std::size_t c = 0; c < cats; ++c) {
        if (labels(n, c)) continue;
        (member[c] ? inside : outside).push_back(c);
      }
      const bool want_inside = in_block(rng);
      const auto& pool = (want_inside && !inside.empty()) || outside.empty() ? inside : outside;
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      labels.set(n, pool[pick(rng)], true);
    }
  }
  return labels;
}

}  // namespace

Dataset generate(const GenConfig& config) {
  config.validate();
  Dataset ds;
  ds.config = config;
  ds.planted_similarity = planted_similarity(config);
  const Mat means = plant_means(config);
  ds.labels = sample_labels(config);

  ds.ids.resize(config.samples);
  std::iota(ds.ids.begin(), ds.ids.end(), std::int64_t{0});
  ds.inputs = Mat(config.samples, config.dim);
  Rng rng = make_rng(derive_seed(config.seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t n = 0; n < config.samples; ++n) {
    auto x = ds.inputs.row(n);
    for (std::size_t c = 0; c < config.categories; ++c) {
      if (!ds.labels(n, c)) continue;
      const auto mu = means.row(c);
      for (std::size_t d = 0; d < config.dim; ++d) x[d] += mu[d];
    }
    if (config.noise_sigma > 0.0) {
      for (double& v : x) v += config.noise_sigma * gauss(rng);
    }
  }
  return ds;
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.config = ds.config;
  out.planted_similarity = ds.planted_similarity;
  out.inputs = Mat(rows.size(), ds.inputs.cols());
  out.labels = LabelMatrix(rows.size(), ds.labels.cols());
  out.ids.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    out.ids.push_back(ds.ids[r]);
    std::copy_n(ds.inputs.row(r).begin(), ds.inputs.cols(), out.inputs.row(i).begin());
    for (std::size_t c = 0; c < ds.labels.cols(); ++c) out.labels.set(i, c, ds.labels(r, c));
  }
  out.config.samples = rows.size();
  return out;
}

Split train_test_split(std::size_t n, double train_fraction, RngSeed seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

void PredictionLog::validate() const {
  if (ids.size() != probs.rows() || labels.rows() != probs.rows() || labels.cols() != probs.cols()) {
    throw SchemaError("prediction log shapes disagree");
  }
  for (double p : probs.data()) {
    if (!(p >= 0.0 && p <= 1.0)) throw SchemaError("probability outside [0, 1]");
  }
}

nlohmann::json to_json(const GenConfig& config) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : config.blocks) blocks.push_back({{"members", b.members}, {"similarity", b.similarity}});
  return {{"categories", config.categories}, {"dim", config.dim},
          {"samples", config.samples},       {"avg_labels", config.avg_labels},
          {"blocks", blocks},                {"noise_sigma", config.noise_sigma},
          {"block_bias", config.block_bias}, {"seed", config.seed.value}};
}

GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig cfg = j.value("preset", std::string("default")) == "tiny" ? GenConfig::tiny_preset()
                                                                      : GenConfig::default_preset();
  try {
    cfg.categories = j.value("categories", cfg.categories);
    cfg.dim = j.value("dim", cfg.dim);
    cfg.samples = j.value("samples", cfg.samples);
    cfg.avg_labels = j.value("avg_labels", cfg.avg_labels);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.block_bias = j.value("block_bias", cfg.block_bias);
    cfg.seed.value = j.value("seed", cfg.seed.value);
    if (j.contains("blocks")) {
      cfg.blocks.clear();
      for (const auto& b : j.at("blocks")) {
        cfg.blocks.push_back({b.at("members").get<std::vector<std::size_t>>(), b.at("similarity").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad dataset config: ") + e.what());
  }
  return cfg;
}

std::filesystem::path meta_path(const std::filesystem::path& dataset_path) {
  return std::filesystem::path(dataset_path.string() + ".meta.json");
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    text += "{\"id\":" + std::to_string(ds.ids[n]) + ",\"x\":";
    io::append_array(text, ds.inputs.row(n));
    text += ",\"y\":";
    io::append_array(text, ds.labels.row(n));
    text += "}\n";
  }
  io::write_text(path, text);

  nlohmann::json meta;
  GenConfig cfg = ds.config;
  cfg.samples = ds.size();
  cfg.categories = ds.categories();
  cfg.dim = ds.inputs.cols();
  meta["config"] = to_json(cfg);
  meta["planted_similarity"] = io::mat_to_json(ds.planted_similarity);
  io::write_text(meta_path(path), meta.dump(2) + "\n");
}

namespace {

template <class Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  const auto lines = io::read_lines(path);
  std::size_t line_no = 0;
  for (const auto& line : lines) {
    ++line_no;
    if (line.empty()) continue;
    fn(io::parse_record(line, line_no), line_no);
  }
}

void read_label_row(const nlohmann::json& rec, std::size_t cols, std::size_t line_no,
                    std::vector<std::uint8_t>& out) {
  auto it = rec.find("y");
  if (it == rec.end() || !it->is_array()) throw SchemaError("missing array field \"y\" (line " + std::to_string(line_no) + ")");
  if (cols != 0 && it->size() != cols) {
    throw SchemaError("label row has " + std::to_string(it->size()) + " entries, expected " +
                      std::to_string(cols) + " (line " + std::to_string(line_no) + ")");
  }
  for (const auto& v : *it) {
    if (!v.is_number_integer() || (v.get<long long>() != 0 && v.get<long long>() != 1)) {
      throw SchemaError("label values must be 0 or 1 (line " + std::to_string(line_no) + ")");
    }
    out.push_back(static_cast<std::uint8_t>(v.get<long long>()));
  }
}

std::int64_t read_id(const nlohmann::json& rec, std::size_t line_no) {
  auto it = rec.find("id");
  if (it == rec.end() || !it->is_number_integer()) {
    throw SchemaError("missing integer field \"id\" (line " + std::to_string(line_no) + ")");
  }
  return it->get<std::int64_t>();
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::vector<std::int64_t> ids;
  std::vector<double> xs;
  std::vector<std::uint8_t> ys;
  std::size_t dim = 0, cats = 0;
  for_each_record(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    ids.push_back(read_id(rec, line_no));
    auto x = io::number_array(rec, "x", dim, line_no);
    if (dim == 0) dim = x.size();
    xs.insert(xs.end(), x.begin(), x.end());
    const std::size_t before = ys.size();
    read_label_row(rec, cats, line_no, ys);
    if (cats == 0) cats = ys.size() - before;
  });
  if (ids.empty()) throw SchemaError("dataset " + path.string() + " has no records");

  Dataset ds;
  ds.ids = std::move(ids);
  const std::size_t n = ds.ids.size();
  ds.inputs = Mat(n, dim, std::move(xs));
  ds.labels = LabelMatrix(n, cats);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cats; ++c) ds.labels.set(r, c, ys[r * cats + c] != 0);
    if (ds.labels.count_row(r) == 0) {
      throw SchemaError("sample " + std::to_string(ds.ids[r]) + " has no positive label");
    }
  }

  const auto meta_file = meta_path(path);
  if (std::filesystem::exists(meta_file)) {
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(io::read_text(meta_file));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed sidecar ") + meta_file.string() + ": " + e.what(), 0);
    }
    try {
      ds.config = gen_config_from_json(meta.at("config"));
      ds.planted_similarity = io::mat_from_json(meta.at("planted_similarity"));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("bad sidecar: ") + e.what());
    }
    if (ds.config.samples != n) {
      throw SchemaError("dataset has " + std::to_string(n) + " records but sidecar declares " +
                        std::to_string(ds.config.samples));
    }
    if (ds.config.dim != dim || ds.config.categories != cats ||
        ds.planted_similarity.rows() != cats || ds.planted_similarity.cols() != cats) {
      throw SchemaError("dataset shape disagrees with sidecar");
    }
  } else {
    ds.config.samples = n;
    ds.config.dim = dim;
    ds.config.categories = cats;
    ds.config.blocks.clear();
    ds.planted_similarity = Mat(cats, cats);
    for (std::size_t c = 0; c < cats; ++c) ds.planted_similarity(c, c) = 1.0;
  }
  return ds;
}

void save_prediction_log(const PredictionLog& log, const std::filesystem::path& path) {
  log.validate();
  std::string text;
  for (std::size_t n = 0; n < log.size(); ++n) {
    text += "{\"id\":" + std::to_string(log.ids[n]) + ",\"p\":";
    io::append_array(text, log.probs.row(n));
    text += ",\"y\":";
    io::append_array(text, log.labels.row(n));
    text += "}\n";
  }
  io::write_text(path, text);
}

PredictionLog load_prediction_log(const std::filesystem::path& path) {
  std::vector<std::int64_t> ids;
  std::vector<double> ps;
  std::vector<std::uint8_t> ys;
  std::size_t cats = 0;
  for_each_record(path, [&](const nlohmann::json& rec, std::size_t line_no) {
    ids.push_back(read_id(rec, line_no));
    auto p = io::number_array(rec, "p", cats, line_no);
    for (double v : p) {
      if (v < 0.0 || v > 1.0) throw SchemaError("probability outside [0, 1] (line " + std::to_string(line_no) + ")");
    }
    if (cats == 0) cats = p.size();
    ps.insert(ps.end(), p.begin(), p.end());
    read_label_row(rec, cats, line_no, ys);
  });
  if (ids.empty()) throw SchemaError("prediction log " + path.string() + " has no records");
  PredictionLog log;
  log.ids = std::move(ids);
  const std::size_t n = log.ids.size();
  log.probs = Mat(n, cats, std::move(ps));
  log.labels = LabelMatrix(n, cats);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cats; ++c) log.labels.set(r, c, ys[r * cats + c] != 0);
  }
  return log;
}

}  // namespace mlcc
