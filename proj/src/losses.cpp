#include "mlcc/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "mlcc/error.hpp"

namespace mlcc {

namespace {

constexpr std::array<std::pair<LossKind, std::string_view>, 11> kNames{{
    {LossKind::nll, "nll"},
    {LossKind::ls, "ls"},
    {LossKind::mlls, "mlls"},
    {LossKind::fl, "fl"},
    {LossKind::flsd, "flsd"},
    {LossKind::dca, "dca"},
    {LossKind::mmce, "mmce"},
    {LossKind::mdca, "mdca"},
    {LossKind::mbls, "mbls"},
    {LossKind::dwbl, "dwbl"},
    {LossKind::dclr, "dclr"},
}};

const double kLogEps = std::log(kProbEpsilon);

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DomainError(std::string(what) + ": shape mismatch");
}

// log of a probability given as a logit, floored like clamp_prob.
double clamped_log_sigmoid(double z) { return std::max(log_sigmoid(z), kLogEps); }

}  // namespace

std::string_view to_string(LossKind kind) {
  for (const auto& [k, name] : kNames) {
    if (k == kind) return name;
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw ConfigError("unknown loss kind '" + std::string(name) + "'");
}

const std::vector<LossKind>& all_loss_kinds() {
  static const std::vector<LossKind> kinds = [] {
    std::vector<LossKind> v;
    for (const auto& [k, n] : kNames) v.push_back(k);
    return v;
  }();
  return kinds;
}

LossConfig LossConfig::for_kind(LossKind kind) {
  LossConfig cfg;
  cfg.kind = kind;
  if (kind == LossKind::mbls) cfg.aux_weight = 0.1;
  return cfg;
}

void LossConfig::validate() const {
  const auto fail = [&](const std::string& msg) {
    throw ConfigError(std::string(to_string(kind)) + ": " + msg);
  };
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must lie in [0, 1)");
  if (!(gamma >= 0.0)) fail("gamma must be >= 0");
  if (!(flsd.gamma_low >= 0.0 && flsd.gamma_high >= 0.0)) fail("flsd gammas must be >= 0");
  if (!(margin >= 0.0)) fail("margin must be >= 0");
  if (!(kernel_width > 0.0)) fail("kernel_width must be > 0");
  if (!(aux_weight >= 0.0)) fail("aux_weight must be >= 0");
  if (!(beta > 0.0 && beta < 1.0)) fail("beta must lie in (0, 1)");
  if (!(eta > 0.0)) fail("eta must be > 0");
  for (double n : class_counts) {
    if (!(n > 0.0)) fail("class counts must be positive");
  }
}

nlohmann::json to_json(const LossConfig& cfg) {
  return {{"kind", std::string(to_string(cfg.kind))},
          {"alpha", cfg.alpha},
          {"gamma", cfg.gamma},
          {"flsd", {{"threshold", cfg.flsd.threshold}, {"gamma_low", cfg.flsd.gamma_low}, {"gamma_high", cfg.flsd.gamma_high}}},
          {"margin", cfg.margin},
          {"kernel_width", cfg.kernel_width},
          {"aux_weight", cfg.aux_weight},
          {"beta", cfg.beta},
          {"eta", cfg.eta}};
}

LossConfig loss_config_from_json(const nlohmann::json& j) {
  try {
    if (j.is_string()) return LossConfig::for_kind(parse_loss_kind(j.get<std::string>()));
    LossConfig cfg = LossConfig::for_kind(parse_loss_kind(j.at("kind").get<std::string>()));
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.gamma = j.value("gamma", cfg.gamma);
    if (j.contains("flsd")) {
      const auto& f = j["flsd"];
      cfg.flsd.threshold = f.value("threshold", cfg.flsd.threshold);
      cfg.flsd.gamma_low = f.value("gamma_low", cfg.flsd.gamma_low);
      cfg.flsd.gamma_high = f.value("gamma_high", cfg.flsd.gamma_high);
    }
    cfg.margin = j.value("margin", cfg.margin);
    cfg.kernel_width = j.value("kernel_width", cfg.kernel_width);
    cfg.aux_weight = j.value("aux_weight", cfg.aux_weight);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.eta = j.value("eta", cfg.eta);
    if (j.contains("class_counts")) cfg.class_counts = j["class_counts"].get<std::vector<double>>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad loss config: ") + e.what());
  }
}

// ---- row-level definitions ------------------------------------------------

double bce(std::span<const double> p, std::span<const double> y) {
  check_same(p.size(), y.size(), "bce");
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = clamp_prob(p[c]);
    total -= y[c] * std::log(q) + (1.0 - y[c]) * std::log(1.0 - q);
  }
  return total;
}

Vec bce_grad(std::span<const double> p, std::span<const double> y) {
  check_same(p.size(), y.size(), "bce_grad");
  Vec g(p.size());
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = clamp_prob(p[c]);
    g[c] = -y[c] / q + (1.0 - y[c]) / (1.0 - q);
  }
  return g;
}

Vec ls_targets(std::span<const std::uint8_t> y, double alpha) {
  const double cats = static_cast<double>(y.size());
  Vec t(y.size());
  for (std::size_t c = 0; c < y.size(); ++c) t[c] = y[c] ? 1.0 - alpha : alpha / (cats - 1.0);
  return t;
}

Vec mlls_targets(std::span<const std::uint8_t> y, double alpha) {
  const auto m = static_cast<double>(std::count(y.begin(), y.end(), std::uint8_t{1}));
  const double cats = static_cast<double>(y.size());
  if (m == cats) throw DomainError("mlls_targets: every class is positive (M == C)");
  Vec t(y.size());
  for (std::size_t c = 0; c < y.size(); ++c) t[c] = y[c] ? 1.0 - alpha : alpha * m / (cats - m);
  return t;
}

double focal(std::span<const double> p, std::span<const double> y, double gamma) {
  if (gamma < 0.0) throw DomainError("focal: gamma must be >= 0");
  check_same(p.size(), y.size(), "focal");
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = clamp_prob(p[c]);
    const double pt = y[c] > 0.5 ? q : 1.0 - q;
    total -= std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  return total;
}

double flsd_gamma(double p_t, const FlsdSchedule& schedule) {
  return p_t < schedule.threshold ? schedule.gamma_low : schedule.gamma_high;
}

double flsd(std::span<const double> p, std::span<const double> y, const FlsdSchedule& schedule) {
  check_same(p.size(), y.size(), "flsd");
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = clamp_prob(p[c]);
    const double pt = y[c] > 0.5 ? q : 1.0 - q;
    total -= std::pow(1.0 - pt, flsd_gamma(pt, schedule)) * std::log(pt);
  }
  return total;
}

namespace {

struct Pooled {
  double confidence;
  double correct;
};

std::vector<Pooled> pool_predictions(const Mat& p, const LabelMatrix& y) {
  if (p.rows() != y.rows() || p.cols() != y.cols()) throw DomainError("calibration aux: shape mismatch");
  std::vector<Pooled> out;
  out.reserve(p.rows() * p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double v = p(i, c);
      out.push_back({std::max(v, 1.0 - v), (v > 0.5) == y(i, c) ? 1.0 : 0.0});
    }
  }
  return out;
}

}  // namespace

double dca_aux(const Mat& p, const LabelMatrix& y) {
  const auto pooled = pool_predictions(p, y);
  if (pooled.empty()) throw DomainError("dca_aux: empty batch");
  double conf = 0.0, acc = 0.0;
  for (const auto& q : pooled) {
    conf += q.confidence;
    acc += q.correct;
  }
  const auto n = static_cast<double>(pooled.size());
  return std::abs(conf / n - acc / n);
}

double mmce_aux(const Mat& p, const LabelMatrix& y, double width) {
  if (!(width > 0.0)) throw DomainError("mmce_aux: kernel width must be > 0");
  const auto pooled = pool_predictions(p, y);
  if (pooled.size() < 2) throw DomainError("mmce_aux: need at least two predictions");
  double s = 0.0;
  for (const auto& a : pooled) {
    for (const auto& b : pooled) {
      const double k = std::exp(-std::abs(a.confidence - b.confidence) / width);
      s += (a.correct - a.confidence) * (b.correct - b.confidence) * k;
    }
  }
  return std::sqrt(std::max(s, 0.0)) / static_cast<double>(pooled.size());
}

double mdca_aux(const Mat& p, const LabelMatrix& y) {
  if (p.rows() != y.rows() || p.cols() != y.cols()) throw DomainError("mdca_aux: shape mismatch");
  if (p.rows() == 0) throw DomainError("mdca_aux: empty batch");
  double total = 0.0;
  const auto rows = static_cast<double>(p.rows());
  for (std::size_t c = 0; c < p.cols(); ++c) {
    double mp = 0.0, my = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
      mp += p(i, c);
      my += y(i, c) ? 1.0 : 0.0;
    }
    total += std::abs(mp / rows - my / rows);
  }
  return total / static_cast<double>(p.cols());
}

double margin_penalty(std::span<const double> logits, double margin) {
  if (logits.empty()) return 0.0;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::max(0.0, top - z - margin);
  return total;
}

double mbls(std::span<const double> logits, std::span<const double> y, double margin, double weight) {
  if (margin < 0.0) throw DomainError("mbls: margin must be >= 0");
  Vec p(logits.size());
  std::transform(logits.begin(), logits.end(), p.begin(), sigmoid);
  return bce(p, y) + weight * margin_penalty(logits, margin);
}

Vec dwbl_weights(std::span<const double> class_counts, double beta) {
  if (!(beta > 0.0 && beta < 1.0)) throw DomainError("dwbl: beta must lie in (0, 1)");
  Vec w(class_counts.size());
  for (std::size_t c = 0; c < w.size(); ++c) {
    if (!(class_counts[c] > 0.0)) throw DomainError("dwbl: class count must be positive");
    w[c] = (1.0 - beta) / (1.0 - std::pow(beta, class_counts[c]));
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& v : w) v /= mean;
  return w;
}

double dwbl(std::span<const double> p, std::span<const double> y, std::span<const double> weights) {
  check_same(p.size(), y.size(), "dwbl");
  check_same(p.size(), weights.size(), "dwbl");
  double total = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    const double q = clamp_prob(p[c]);
    const double pt = y[c] > 0.5 ? q : 1.0 - q;
    total -= weights[c] * std::pow(1.0 - pt, pt) * std::log(pt);
  }
  return total;
}

double dclr_cls(std::span<const double> p, std::span<const double> y_ins,
                std::span<const double> y_pro, double eta) {
  if (!(eta > 0.0)) throw DomainError("dclr_cls: eta must be > 0");
  return eta * (bce(p, y_ins) + bce(p, y_pro));
}

double acl(std::span<const double> p_hat, std::span<const double> y_ins,
           std::span<const double> y_pro, double eta) {
  return dclr_cls(p_hat, y_ins, y_pro, eta);
}

// ---- batch evaluation on logits --------------------------------------------

namespace {

struct Batch {
  const Mat& z;
  Mat p;
  std::size_t rows, cols;
  explicit Batch(const Mat& logits) : z(logits), p(logits.rows(), logits.cols()), rows(logits.rows()), cols(logits.cols()) {
    for (std::size_t i = 0; i < z.data().size(); ++i) p.data()[i] = sigmoid(z.data()[i]);
  }
};

// Mean over rows of per-row BCE against soft targets; gradient p - t.
double bce_term(const Batch& b, const Mat& targets, double scale, Mat* grad) {
  double total = 0.0;
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t c = 0; c < b.cols; ++c) {
      const double z = b.z(i, c);
      const double t = targets(i, c);
      total -= t * clamped_log_sigmoid(z) + (1.0 - t) * clamped_log_sigmoid(-z);
      if (grad) (*grad)(i, c) += scale * (b.p(i, c) - t) / static_cast<double>(b.rows);
    }
  }
  return scale * total / static_cast<double>(b.rows);
}

// Per-element focal with per-element gamma; gamma_of(p_t) picks the exponent.
template <class GammaOf>
double focal_term(const Batch& b, const LabelMatrix& y, GammaOf gamma_of, Mat* grad) {
  double total = 0.0;
  const auto rows = static_cast<double>(b.rows);
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t c = 0; c < b.cols; ++c) {
      const double s = y(i, c) ? 1.0 : -1.0;
      const double zt = s * b.z(i, c);
      const double pt = sigmoid(zt);
      const double q = sigmoid(-zt);
      const double log_pt = clamped_log_sigmoid(zt);
      const double gamma = gamma_of(pt);
      const double mod = std::pow(q, gamma);
      total -= mod * log_pt;
      if (grad) (*grad)(i, c) += s * (gamma * pt * mod * log_pt - mod * q) / rows;
    }
  }
  return total / rows;
}

double dwbl_term(const Batch& b, const LabelMatrix& y, std::span<const double> w, Mat* grad) {
  double total = 0.0;
  const auto rows = static_cast<double>(b.rows);
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t c = 0; c < b.cols; ++c) {
      const double s = y(i, c) ? 1.0 : -1.0;
      const double zt = s * b.z(i, c);
      const double pt = sigmoid(zt);
      const double q = sigmoid(-zt);
      const double log_pt = clamped_log_sigmoid(zt);
      const double log_q = log_sigmoid(-zt);
      const double g = std::exp(pt * log_q);  // (1 - p_t)^{p_t}
      total -= w[c] * g * log_pt;
      if (grad) {
        (*grad)(i, c) += -w[c] * s * (g * pt * (q * log_q - pt) * log_pt + g * q) / rows;
      }
    }
  }
  return total / rows;
}

// Pooled confidence sigma(|z|) and its derivative sign(z) p (1 - p).
struct PoolEntry {
  double conf, correct, dconf;
};

std::vector<PoolEntry> pool_logits(const Batch& b, const LabelMatrix& y) {
  std::vector<PoolEntry> out;
  out.reserve(b.rows * b.cols);
  for (std::size_t i = 0; i < b.rows; ++i) {
    for (std::size_t c = 0; c < b.cols; ++c) {
      const double p = b.p(i, c);
      out.push_back({std::max(p, 1.0 - p), (p > 0.5) == y(i, c) ? 1.0 : 0.0,
                     sign(b.z(i, c)) * p * (1.0 - p)});
    }
  }
  return out;
}

double dca_term(const Batch& b, const LabelMatrix& y, double weight, Mat* grad) {
  const auto pooled = pool_logits(b, y);
  const auto n = static_cast<double>(pooled.size());
  double conf = 0.0, acc = 0.0;
  for (const auto& e : pooled) {
    conf += e.conf;
    acc += e.correct;
  }
  const double gap = conf / n - acc / n;
  if (grad) {
    const double s = weight * sign(gap) / n;
    for (std::size_t j = 0; j < pooled.size(); ++j) grad->data()[j] += s * pooled[j].dconf;
  }
  return weight * std::abs(gap);
}

// Laplacian-kernel double sum in O(n log n): with entries sorted by
// confidence, exp(-|r_l - r_j| / w) factorizes along the sorted order, so the
// sums before/after each entry follow a one-pass recursion.
double mmce_term(const Batch& b, const LabelMatrix& y, double width, double weight, Mat* grad) {
  const auto pooled = pool_logits(b, y);
  const std::size_t n = pooled.size();
  if (n < 2) throw DomainError("mmce: need at least two predictions");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t c) { return pooled[a].conf < pooled[c].conf; });

  std::vector<double> r(n), e(n), before(n, 0.0), after(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    r[t] = pooled[order[t]].conf;
    e[t] = pooled[order[t]].correct - r[t];
  }
  for (std::size_t t = 1; t < n; ++t) {
    before[t] = (before[t - 1] + e[t - 1]) * std::exp(-(r[t] - r[t - 1]) / width);
  }
  for (std::size_t t = n - 1; t-- > 0;) {
    after[t] = (after[t + 1] + e[t + 1]) * std::exp(-(r[t + 1] - r[t]) / width);
  }
  double s = 0.0;
  for (std::size_t t = 0; t < n; ++t) s += e[t] * (e[t] + 2.0 * before[t]);
  const double nn = static_cast<double>(n);
  if (s <= 0.0) return 0.0;
  const double value = std::sqrt(s) / nn;
  if (grad) {
    const double outer = weight / (2.0 * nn * std::sqrt(s));
    for (std::size_t t = 0; t < n; ++t) {
      const double near = e[t] + before[t] + after[t];
      const double ds = -2.0 * near - (2.0 / width) * e[t] * (before[t] - after[t]);
      grad->data()[order[t]] += outer * ds * pooled[order[t]].dconf;
    }
  }
  return weight * value;
}

double mdca_term(const Batch& b, const LabelMatrix& y, double weight, Mat* grad) {
  const auto rows = static_cast<double>(b.rows);
  const auto cols = static_cast<double>(b.cols);
  double total = 0.0;
  for (std::size_t c = 0; c < b.cols; ++c) {
    double mp = 0.0, my = 0.0;
    for (std::size_t i = 0; i < b.rows; ++i) {
      mp += b.p(i, c);
      my += y(i, c) ? 1.0 : 0.0;
    }
    const double gap = mp / rows - my / rows;
    total += std::abs(gap);
    if (grad) {
      for (std::size_t i = 0; i < b.rows; ++i) {
        const double p = b.p(i, c);
        (*grad)(i, c) += weight * sign(gap) / (cols * rows) * p * (1.0 - p);
      }
    }
  }
  return weight * total / cols;
}

double margin_term(const Batch& b, double margin, double weight, Mat* grad) {
  double total = 0.0;
  const auto rows = static_cast<double>(b.rows);
  for (std::size_t i = 0; i < b.rows; ++i) {
    const auto z = b.z.row(i);
    const auto top = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    for (std::size_t c = 0; c < b.cols; ++c) {
      const double h = z[top] - z[c] - margin;
      if (h <= 0.0) continue;
      total += h;
      if (grad) {
        (*grad)(i, c) -= weight / rows;
        (*grad)(i, top) += weight / rows;
      }
    }
  }
  return weight * total / rows;
}

}  // namespace

LossValue evaluate_loss(const LossConfig& cfg, const Mat& logits, const BatchTargets& targets,
                        bool want_grad) {
  if (logits.rows() == 0) throw DomainError("evaluate_loss: empty batch");
  const Batch b(logits);
  LossValue out;
  if (want_grad) out.grad = Mat(b.rows, b.cols);
  Mat* grad = want_grad ? &out.grad : nullptr;

  const auto need_hard = [&]() -> const LabelMatrix& {
    if (!targets.hard || targets.hard->rows() != b.rows || targets.hard->cols() != b.cols) {
      throw DomainError(std::string(to_string(cfg.kind)) + ": hard labels missing or mis-shaped");
    }
    return *targets.hard;
  };
  const auto rows_of = [&](auto make_row) {
    const LabelMatrix& y = need_hard();
    Mat t(b.rows, b.cols);
    for (std::size_t i = 0; i < b.rows; ++i) {
      const Vec row = make_row(y.row(i));
      std::copy(row.begin(), row.end(), t.row(i).begin());
    }
    return t;
  };

  switch (cfg.kind) {
    case LossKind::nll:
      out.components.emplace_back("bce", bce_term(b, need_hard().as_mat(), 1.0, grad));
      break;
    case LossKind::ls:
      out.components.emplace_back(
          "bce", bce_term(b, rows_of([&](auto y) { return ls_targets(y, cfg.alpha); }), 1.0, grad));
      break;
    case LossKind::mlls:
      out.components.emplace_back(
          "bce", bce_term(b, rows_of([&](auto y) { return mlls_targets(y, cfg.alpha); }), 1.0, grad));
      break;
    case LossKind::fl:
      if (cfg.gamma < 0.0) throw DomainError("focal: gamma must be >= 0");
      out.components.emplace_back("focal", focal_term(b, need_hard(), [&](double) { return cfg.gamma; }, grad));
      break;
    case LossKind::flsd:
      out.components.emplace_back(
          "focal", focal_term(b, need_hard(), [&](double pt) { return flsd_gamma(pt, cfg.flsd); }, grad));
      break;
    case LossKind::dca: {
      const LabelMatrix& y = need_hard();
      out.components.emplace_back("bce", bce_term(b, y.as_mat(), 1.0, grad));
      out.components.emplace_back("dca", dca_term(b, y, cfg.aux_weight, grad));
      break;
    }
    case LossKind::mmce: {
      const LabelMatrix& y = need_hard();
      out.components.emplace_back("bce", bce_term(b, y.as_mat(), 1.0, grad));
      out.components.emplace_back("mmce", mmce_term(b, y, cfg.kernel_width, cfg.aux_weight, grad));
      break;
    }
    case LossKind::mdca: {
      const LabelMatrix& y = need_hard();
      out.components.emplace_back("bce", bce_term(b, y.as_mat(), 1.0, grad));
      out.components.emplace_back("mdca", mdca_term(b, y, cfg.aux_weight, grad));
      break;
    }
    case LossKind::mbls: {
      if (cfg.margin < 0.0) throw DomainError("mbls: margin must be >= 0");
      out.components.emplace_back("bce", bce_term(b, need_hard().as_mat(), 1.0, grad));
      out.components.emplace_back("margin", margin_term(b, cfg.margin, cfg.aux_weight, grad));
      break;
    }
    case LossKind::dwbl: {
      if (cfg.class_counts.size() != b.cols) throw DomainError("dwbl: class_counts must have one entry per class");
      const Vec w = dwbl_weights(cfg.class_counts, cfg.beta);
      out.components.emplace_back("dwbl", dwbl_term(b, need_hard(), w, grad));
      break;
    }
    case LossKind::dclr: {
      if (!targets.ins || !targets.pro) throw DomainError("dclr: soft labels missing");
      if (targets.ins->rows() != b.rows || targets.ins->cols() != b.cols ||
          targets.pro->rows() != b.rows || targets.pro->cols() != b.cols) {
        throw DomainError("dclr: soft labels mis-shaped");
      }
      if (!(cfg.eta > 0.0)) throw DomainError("dclr: eta must be > 0");
      out.components.emplace_back("ins", bce_term(b, *targets.ins, cfg.eta, grad));
      out.components.emplace_back("pro", bce_term(b, *targets.pro, cfg.eta, grad));
      break;
    }
  }
  for (const auto& [name, v] : out.components) out.total += v;
  return out;
}

}  // namespace mlcc
