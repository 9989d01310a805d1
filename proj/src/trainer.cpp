#include "mlcc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"

namespace mlcc {

namespace {

constexpr std::uint64_t kInitStream = 21;
constexpr std::uint64_t kShuffleStream = 22;

}  // namespace

void MlrHparams::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("mlr: learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("mlr: batch size must be at least 1");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("mlr: train fraction must lie in (0, 1)");
  if (bins < 1 || groups < 1) throw ConfigError("mlr: bin counts must be at least 1");
}

nlohmann::json to_json(const MlrHparams& h) {
  return {{"learning_rate", h.learning_rate}, {"batch_size", h.batch_size}, {"epochs", h.epochs},
          {"hidden_units", h.hidden_units},   {"train_fraction", h.train_fraction},
          {"split_seed", h.split_seed.value}, {"bins", h.bins},
          {"groups", h.groups}};
}

MlrHparams mlr_hparams_from_json(const nlohmann::json& j, MlrHparams h) {
  try {
    h.learning_rate = j.value("learning_rate", h.learning_rate);
    h.batch_size = j.value("batch_size", h.batch_size);
    h.epochs = j.value("epochs", h.epochs);
    h.hidden_units = j.value("hidden_units", h.hidden_units);
    h.train_fraction = j.value("train_fraction", h.train_fraction);
    h.split_seed.value = j.value("split_seed", h.split_seed.value);
    h.bins = j.value("bins", h.bins);
    h.groups = j.value("groups", h.groups);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad mlr config: ") + e.what());
  }
  return h;
}

// ---- parameters -------------------------------------------------------------

bool MlrParams::all_finite() const noexcept {
  const auto finite = [](const Vec& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  return hidden_weight.all_finite() && finite(hidden_bias) && weight.all_finite() && finite(bias);
}

void MlrParams::add_scaled(const MlrParams& other, double scale) {
  const auto axpy = [scale](std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  axpy(hidden_weight.data(), other.hidden_weight.data());
  axpy(hidden_bias, other.hidden_bias);
  axpy(weight.data(), other.weight.data());
  axpy(bias, other.bias);
}

Vec MlrParams::flatten() const {
  Vec out(hidden_weight.data().begin(), hidden_weight.data().end());
  out.insert(out.end(), hidden_bias.begin(), hidden_bias.end());
  out.insert(out.end(), weight.data().begin(), weight.data().end());
  out.insert(out.end(), bias.begin(), bias.end());
  return out;
}

void MlrParams::assign(std::span<const double> flat) {
  const std::size_t n = hidden_weight.data().size() + hidden_bias.size() + weight.data().size() + bias.size();
  if (flat.size() != n) throw DomainError("mlr params: flat vector has the wrong length");
  auto it = flat.begin();
  const auto take = [&](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  take(hidden_weight.data());
  take(hidden_bias);
  take(weight.data());
  take(bias);
}

nlohmann::json to_json(const MlrParams& params) {
  nlohmann::json j = {{"weight", io::mat_to_json(params.weight)}, {"bias", params.bias}};
  if (!params.linear()) {
    j["hidden_weight"] = io::mat_to_json(params.hidden_weight);
    j["hidden_bias"] = params.hidden_bias;
  }
  return j;
}

MlrParams mlr_params_from_json(const nlohmann::json& j) {
  try {
    MlrParams p;
    p.weight = io::mat_from_json(j.at("weight"));
    p.bias = j.at("bias").get<Vec>();
    if (j.contains("hidden_weight")) {
      p.hidden_weight = io::mat_from_json(j["hidden_weight"]);
      p.hidden_bias = j.at("hidden_bias").get<Vec>();
    }
    const bool ok = p.bias.size() == p.weight.rows() &&
                    (p.linear() || (p.hidden_bias.size() == p.hidden_weight.rows() &&
                                    p.weight.cols() == p.hidden_weight.rows()));
    if (!ok) throw SchemaError("mlr params: inconsistent shapes");
    if (!p.all_finite()) throw SchemaError("mlr params: non-finite value");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("mlr params: ") + e.what());
  }
}

MlrParams init_mlr(std::size_t input_dim, std::size_t categories, std::size_t hidden_units, RngSeed seed) {
  MlrParams p;
  p.bias.assign(categories, 0.0);
  if (hidden_units == 0) {
    p.weight = Mat(categories, input_dim);
    return p;
  }
  Rng rng = make_rng(derive_seed(seed, kInitStream));
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  p.hidden_weight = Mat(hidden_units, input_dim);
  for (double& w : p.hidden_weight.data()) w = gauss(rng);
  p.hidden_bias.assign(hidden_units, 0.0);
  p.weight = Mat(categories, hidden_units);
  return p;
}

namespace {

struct Forward {
  Mat pre;     // hidden pre-activations (empty for linear)
  Mat hidden;  // relu(pre), or the inputs themselves for linear
  Mat logits;
};

Mat affine(const Mat& in, const Mat& w, const Vec& b) {
  Mat out(in.rows(), w.rows());
  for (std::size_t i = 0; i < in.rows(); ++i) {
    for (std::size_t j = 0; j < w.rows(); ++j) out(i, j) = dot(w.row(j), in.row(i)) + b[j];
  }
  return out;
}

Forward forward(const MlrParams& params, const Mat& inputs) {
  if (inputs.cols() != params.input_dim()) {
    throw DomainError("mlr: input has dimension " + std::to_string(inputs.cols()) + ", expected " +
                      std::to_string(params.input_dim()));
  }
  Forward f;
  if (params.linear()) {
    f.hidden = inputs;
  } else {
    f.pre = affine(inputs, params.hidden_weight, params.hidden_bias);
    f.hidden = f.pre;
    for (double& v : f.hidden.data()) v = std::max(v, 0.0);
  }
  f.logits = affine(f.hidden, params.weight, params.bias);
  return f;
}

}  // namespace

Mat mlr_logits(const MlrParams& params, const Mat& inputs) { return forward(params, inputs).logits; }

Vec predict(const MlrParams& params, std::span<const double> x) {
  const Mat one(1, x.size(), Vec(x.begin(), x.end()));
  const Mat z = mlr_logits(params, one);
  Vec p(z.cols());
  for (std::size_t c = 0; c < p.size(); ++c) p[c] = sigmoid(z(0, c));
  return p;
}

MlrLoss mlr_batch_loss(const MlrParams& params, const Mat& inputs, const BatchTargets& targets,
                       const LossConfig& cfg, bool want_grad) {
  const Forward f = forward(params, inputs);
  MlrLoss out;
  out.value = evaluate_loss(cfg, f.logits, targets, want_grad);
  if (!want_grad) return out;

  const Mat& dz = out.value.grad;
  MlrParams& g = out.grad;
  g.weight = Mat(params.weight.rows(), params.weight.cols());
  g.bias.assign(params.bias.size(), 0.0);
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    const auto h = f.hidden.row(i);
    for (std::size_t c = 0; c < dz.cols(); ++c) {
      const double d = dz(i, c);
      if (d == 0.0) continue;
      g.bias[c] += d;
      auto gw = g.weight.row(c);
      for (std::size_t k = 0; k < h.size(); ++k) gw[k] += d * h[k];
    }
  }
  if (params.linear()) return out;

  g.hidden_weight = Mat(params.hidden_weight.rows(), params.hidden_weight.cols());
  g.hidden_bias.assign(params.hidden_bias.size(), 0.0);
  Vec dh(params.hidden_bias.size());
  for (std::size_t i = 0; i < inputs.rows(); ++i) {
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t c = 0; c < dz.cols(); ++c) {
      const auto w = params.weight.row(c);
      for (std::size_t k = 0; k < dh.size(); ++k) dh[k] += dz(i, c) * w[k];
    }
    const auto x = inputs.row(i);
    for (std::size_t k = 0; k < dh.size(); ++k) {
      if (f.pre(i, k) <= 0.0 || dh[k] == 0.0) continue;
      g.hidden_bias[k] += dh[k];
      auto gw = g.hidden_weight.row(k);
      for (std::size_t d = 0; d < x.size(); ++d) gw[d] += dh[k] * x[d];
    }
  }
  return out;
}

FitResult fit_mlr(const Mat& inputs, const LabelSource& labels, const SoftTargets* soft, const LossConfig& cfg,
                  const MlrHparams& h, RngSeed seed) {
  h.validate();
  cfg.validate();
  const std::size_t n = inputs.rows();
  const std::size_t cats = labels.categories();
  if (n == 0) throw DomainError("fit_mlr: no training rows");
  if (labels.rows() != n) throw DomainError("fit_mlr: labels do not match the inputs");
  const bool dclr = cfg.kind == LossKind::dclr;
  if (dclr) {
    if (!soft) throw ConfigError("dclr needs instance- and prototype-level soft labels");
    if (soft->ins.rows() != n || soft->pro.rows() != n || soft->ins.cols() != cats || soft->pro.cols() != cats) {
      throw ConfigError("dclr soft labels do not match the training rows");
    }
  }

  FitResult result{init_mlr(inputs.cols(), cats, h.hidden_units, seed), {}};
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < h.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(derive_seed(derive_seed(seed, kShuffleStream), epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += h.batch_size) {
      const std::size_t size = std::min(n, start + h.batch_size) - start;
      Mat x(size, inputs.cols());
      LabelMatrix hard;
      Mat ins, pro;
      BatchTargets targets;
      if (dclr) {
        ins = Mat(size, cats);
        pro = Mat(size, cats);
        targets.ins = &ins;
        targets.pro = &pro;
      } else {
        hard = LabelMatrix(size, cats);
        targets.hard = &hard;
      }
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t r = order[start + i];
        std::copy(inputs.row(r).begin(), inputs.row(r).end(), x.row(i).begin());
        if (dclr) {
          std::copy(soft->ins.row(r).begin(), soft->ins.row(r).end(), ins.row(i).begin());
          std::copy(soft->pro.row(r).begin(), soft->pro.row(r).end(), pro.row(i).begin());
        } else {
          for (std::size_t c = 0; c < cats; ++c) hard.set(i, c, labels.label(r, c));
        }
      }
      const MlrLoss loss = mlr_batch_loss(result.params, x, targets, cfg, true);
      if (!std::isfinite(loss.value.total)) {
        throw TrainingError(std::string(to_string(cfg.kind)) + " diverged: non-finite loss at epoch " +
                            std::to_string(epoch + 1) + ", batch " + std::to_string(batches + 1));
      }
      result.params.add_scaled(loss.grad, -h.learning_rate);
      sum += loss.value.total;
      ++batches;
    }
    result.epoch_losses.push_back(sum / static_cast<double>(batches));
  }
  return result;
}

nlohmann::json to_json(const RunRecord& record) {
  return {{"loss", record.loss},
          {"seed", record.seed},
          {"epoch_losses", record.epoch_losses},
          {"report", to_json(record.report)}};
}

namespace {

Mat aligned_soft(const SoftLabelMatrix& soft, const Dataset& train, const char* what) {
  if (soft.values.cols() != train.categories()) {
    throw ConfigError(std::string(what) + " soft labels have the wrong number of categories");
  }
  std::unordered_map<std::int64_t, std::size_t> row_of;
  for (std::size_t i = 0; i < soft.ids.size(); ++i) row_of.emplace(soft.ids[i], i);
  Mat out(train.size(), train.categories());
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto it = row_of.find(train.ids[i]);
    if (it == row_of.end()) {
      throw ConfigError(std::string(what) + " soft labels have no row for training id " + std::to_string(train.ids[i]));
    }
    const auto src = soft.values.row(it->second);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

}  // namespace

TrainOutcome train_mlr(const Dataset& ds, const LossConfig& loss, SoftLabelPair soft, const MlrHparams& h,
                       RngSeed seed) {
  h.validate();
  const auto start = std::chrono::steady_clock::now();
  const Split split = train_test_split(ds.size(), h.train_fraction, h.split_seed);
  if (split.train.empty() || split.test.empty()) throw ConfigError("mlr: split leaves an empty partition");
  const Dataset train = subset(ds, split.train);
  const Dataset test = subset(ds, split.test);

  LossConfig cfg = loss;
  if (cfg.kind == LossKind::dwbl && cfg.class_counts.empty()) {
    for (std::size_t c = 0; c < train.categories(); ++c) {
      cfg.class_counts.push_back(static_cast<double>(std::max<std::size_t>(1, train.labels.count_col(c))));
    }
  }

  std::optional<SoftTargets> targets;
  if (cfg.kind == LossKind::dclr) {
    if (!soft.ins || !soft.pro) throw ConfigError("dclr needs instance- and prototype-level soft labels");
    targets = SoftTargets{aligned_soft(*soft.ins, train, "instance-level"),
                          aligned_soft(*soft.pro, train, "prototype-level")};
  }

  const MatrixLabels labels(train.labels);
  FitResult fit = fit_mlr(train.inputs, labels, targets ? &*targets : nullptr, cfg, h, seed);

  TrainOutcome out;
  out.params = std::move(fit.params);
  out.test_log.ids = test.ids;
  out.test_log.labels = test.labels;
  const Mat z = mlr_logits(out.params, test.inputs);
  out.test_log.probs = Mat(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.data().size(); ++i) out.test_log.probs.data()[i] = sigmoid(z.data()[i]);

  out.record.loss = std::string(to_string(cfg.kind));
  out.record.seed = seed.value;
  out.record.epoch_losses = std::move(fit.epoch_losses);
  out.record.report = evaluate(out.test_log, h.bins, h.groups);
  out.record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace mlcc
