#include "mlcc/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

std::string_view to_string(CorrelationKind kind) {
  return kind == CorrelationKind::instance ? "ins" : "pro";
}

double similarity_or_zero(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u);
  const double nv = norm(v);
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

CorrelationMatrix normalize_correlation(const Mat& raw, CorrelationKind kind) {
  if (raw.rows() != raw.cols()) throw DomainError("correlation: raw matrix is not square");
  CorrelationMatrix out{Mat(raw.rows(), raw.cols()), kind};
  if (raw.rows() < 2) return out;  // nothing left after masking the diagonal
  for (std::size_t c = 0; c < raw.rows(); ++c) {
    const std::size_t mask[] = {c};
    const Vec row = masked_softmax(raw.row(c), mask);
    std::copy(row.begin(), row.end(), out.values.row(c).begin());
  }
  return out;
}

namespace {

// `count` indices into [0, n): distinct (Floyd's algorithm) when n >= count,
// otherwise drawn with replacement. Returned ascending.
std::vector<std::size_t> draw_indices(std::size_t n, std::size_t count, Rng& rng) {
  std::vector<std::size_t> picked;
  picked.reserve(count);
  if (n >= count) {
    for (std::size_t j = n - count; j < n; ++j) {
      std::uniform_int_distribution<std::size_t> dist(0, j);
      const std::size_t t = dist(rng);
      if (std::find(picked.begin(), picked.end(), t) == picked.end()) {
        picked.push_back(t);
      } else {
        picked.push_back(j);
      }
    }
  } else {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    for (std::size_t i = 0; i < count; ++i) picked.push_back(dist(rng));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

// Rows scaled to unit length; zero rows stay zero, so a dot product with them
// reproduces similarity_or_zero.
Mat unit_rows(const Mat& m) {
  Mat out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double n = norm(row);
    for (double& v : row) v = n == 0.0 ? 0.0 : v / n;
  }
  return out;
}

double unit_similarity(std::span<const double> u, std::span<const double> v) {
  return std::clamp(dot(u, v), -1.0, 1.0);
}

void check_query(const Mat& query, std::size_t categories, std::size_t dim) {
  if (query.rows() != categories || query.cols() != dim) {
    throw DomainError("correlation: query must be " + std::to_string(categories) + " x " +
                      std::to_string(dim));
  }
}

}  // namespace

CorrelationMatrix instance_corr(const Mat& query, const FeatureBank& bank, std::size_t retrieve,
                                RngSeed seed) {
  const std::size_t cats = bank.categories();
  check_query(query, cats, bank.feature_dim());
  if (retrieve == 0) throw DomainError("instance_corr: T must be at least 1");

  Rng rng = make_rng(seed);
  const Mat q = unit_rows(query);
  Mat raw(cats, cats);
  Vec f(bank.feature_dim());
  for (std::size_t other = 0; other < cats; ++other) {
    const auto& pool = bank.positives(other);
    if (pool.empty()) {
      throw DomainError("instance_corr: category " + std::to_string(other) +
                        " has no positive sample in the bank");
    }
    const auto picks = draw_indices(pool.size(), retrieve, rng);
    for (std::size_t p : picks) {
      const auto src = bank.feature(pool[p], other);
      const double n = norm(src);
      for (std::size_t k = 0; k < f.size(); ++k) f[k] = n == 0.0 ? 0.0 : src[k] / n;
      for (std::size_t c = 0; c < cats; ++c) {
        if (c != other) raw(c, other) += unit_similarity(q.row(c), f);
      }
    }
  }
  return normalize_correlation(raw, CorrelationKind::instance);
}

PrototypeBank build_prototypes(const FeatureBank& bank, std::size_t k, RngSeed seed,
                               std::size_t max_iters) {
  if (k == 0) throw DomainError("build_prototypes: K must be at least 1");
  PrototypeBank protos;
  protos.requested_k = k;
  protos.prototypes.reserve(bank.categories());
  for (std::size_t c = 0; c < bank.categories(); ++c) {
    const Mat points = bank.positive_features(c);
    if (points.rows() == 0) {
      throw DomainError("build_prototypes: category " + std::to_string(c) + " has no positive sample");
    }
    std::size_t kc = k;
    if (points.rows() < k) {
      kc = points.rows();
      protos.clamped.push_back(c);
    }
    protos.prototypes.push_back(kmeans(points, kc, max_iters, derive_seed(seed, c)).centroids);
  }
  return protos;
}

CorrelationMatrix proto_corr(const Mat& query, const PrototypeBank& protos) {
  const std::size_t cats = protos.categories();
  if (cats == 0) throw DomainError("proto_corr: empty prototype bank");
  check_query(query, cats, protos.prototypes.front().cols());
  const bool average = !protos.uniform();

  const Mat q = unit_rows(query);
  std::vector<Mat> units;
  units.reserve(cats);
  for (const auto& p : protos.prototypes) units.push_back(unit_rows(p));
  Mat raw(cats, cats);
  for (std::size_t c = 0; c < cats; ++c) {
    for (std::size_t other = 0; other < cats; ++other) {
      if (c == other) continue;
      const Mat& p = units[other];
      double sum = 0.0;
      for (std::size_t k = 0; k < p.rows(); ++k) sum += unit_similarity(q.row(c), p.row(k));
      raw(c, other) = average ? sum / static_cast<double>(p.rows()) : sum;
    }
  }
  return normalize_correlation(raw, CorrelationKind::prototype);
}

SoftRow soften(std::span<const std::uint8_t> labels, const CorrelationMatrix& corr, double alpha) {
  const std::size_t cats = labels.size();
  if (corr.values.rows() != cats || corr.values.cols() != cats) {
    throw DomainError("soften: correlation matrix does not match the label row");
  }
  if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("soften: alpha must lie in [0, 1)");
  if (std::none_of(labels.begin(), labels.end(), [](std::uint8_t b) { return b != 0; })) {
    throw DomainError("soften: label row has no positive category");
  }

  SoftRow out{Vec(cats, 0.0), 0.0};
  for (std::size_t c = 0; c < cats; ++c) {
    double spread = 0.0;
    for (std::size_t k = 0; k < cats; ++k) {
      if (labels[k]) spread += alpha * corr.values(k, c);
    }
    if (labels[c]) {
      out.values[c] = 1.0 - alpha;
      out.overwrite_mass += spread;
    } else {
      out.values[c] = spread;
    }
  }
  return out;
}

namespace {

CorrelationMatrix sample_correlation(const FeatureBank& bank, std::size_t n, CorrelationKind kind,
                                     std::size_t retrieve, const PrototypeBank* protos, RngSeed seed) {
  const Mat query = bank.sample_features(n);
  if (kind == CorrelationKind::instance) {
    return instance_corr(query, bank, retrieve, derive_seed(seed, static_cast<std::uint64_t>(bank.ids()[n])));
  }
  if (protos == nullptr) throw DomainError("prototype-level correlation needs a prototype bank");
  return proto_corr(query, *protos);
}

}  // namespace

SoftLabelMatrix soften_bank(const FeatureBank& bank, CorrelationKind kind, double alpha,
                            std::size_t retrieve, const PrototypeBank* protos, RngSeed seed) {
  SoftLabelMatrix soft;
  soft.ids = bank.ids();
  soft.alpha = alpha;
  soft.kind = kind;
  soft.values = Mat(bank.size(), bank.categories());
  soft.overwrite_mass.resize(bank.size());
  for (std::size_t n = 0; n < bank.size(); ++n) {
    const auto corr = sample_correlation(bank, n, kind, retrieve, protos, seed);
    const auto row = soften(bank.labels().row(n), corr, alpha);
    std::copy(row.values.begin(), row.values.end(), soft.values.row(n).begin());
    soft.overwrite_mass[n] = row.overwrite_mass;
  }
  return soft;
}

Mat category_correlation(const FeatureBank& bank, CorrelationKind kind, std::size_t retrieve,
                         const PrototypeBank* protos, RngSeed seed) {
  const std::size_t cats = bank.categories();
  Mat sum(cats, cats);
  std::vector<std::size_t> counts(cats, 0);
  for (std::size_t n = 0; n < bank.size(); ++n) {
    const auto corr = sample_correlation(bank, n, kind, retrieve, protos, seed);
    for (std::size_t c = 0; c < cats; ++c) {
      if (!bank.labels()(n, c)) continue;
      ++counts[c];
      auto dst = sum.row(c);
      const auto src = corr.values.row(c);
      for (std::size_t j = 0; j < cats; ++j) dst[j] += src[j];
    }
  }
  for (std::size_t c = 0; c < cats; ++c) {
    if (counts[c] == 0) continue;
    for (double& v : sum.row(c)) v /= static_cast<double>(counts[c]);
  }
  return sum;
}

void save_soft_labels(const SoftLabelMatrix& soft, const std::filesystem::path& path) {
  std::string text;
  const std::string kind(to_string(soft.kind));
  for (std::size_t n = 0; n < soft.ids.size(); ++n) {
    text += "{\"id\":" + std::to_string(soft.ids[n]) + ",\"kind\":\"" + kind + "\",\"y_soft\":";
    io::append_array(text, soft.values.row(n));
    text += ",\"alpha\":" + io::format_double(soft.alpha);
    text += ",\"overwrite_mass\":" + io::format_double(soft.overwrite_mass[n]) + "}\n";
  }
  io::write_text(path, text);
}

SoftLabelMatrix load_soft_labels(const std::filesystem::path& path) {
  SoftLabelMatrix soft;
  std::vector<double> values;
  std::size_t cats = 0;
  std::size_t line_no = 0;
  bool first = true;
  for (const auto& line : io::read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    const auto rec = io::parse_record(line, line_no);
    const auto where = " (line " + std::to_string(line_no) + ")";
    if (!rec.contains("id") || !rec["id"].is_number_integer()) throw SchemaError("missing integer \"id\"" + where);
    const std::string kind = rec.value("kind", std::string());
    if (kind != "ins" && kind != "pro") throw SchemaError("\"kind\" must be \"ins\" or \"pro\"" + where);
    const auto parsed = kind == "ins" ? CorrelationKind::instance : CorrelationKind::prototype;
    if (first) {
      soft.kind = parsed;
      soft.alpha = rec.value("alpha", 0.0);
    } else if (parsed != soft.kind) {
      throw SchemaError("mixed soft-label kinds in one file" + where);
    }
    auto row = io::number_array(rec, "y_soft", cats, line_no);
    for (double v : row) {
      if (v < 0.0 || v > 1.0) throw SchemaError("soft label outside [0, 1]" + where);
    }
    if (cats == 0) cats = row.size();
    values.insert(values.end(), row.begin(), row.end());
    soft.ids.push_back(rec["id"].get<std::int64_t>());
    soft.overwrite_mass.push_back(rec.value("overwrite_mass", 0.0));
    first = false;
  }
  if (soft.ids.empty()) throw SchemaError("soft-label file " + path.string() + " is empty");
  soft.values = Mat(soft.ids.size(), cats, std::move(values));
  return soft;
}

}  // namespace mlcc
