#include "mlcc/cscl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlcc/error.hpp"
#include "mlcc/io.hpp"
#include "mlcc/losses.hpp"

namespace mlcc {

namespace {

// Sub-stream tags for derive_seed.
constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kShuffleStream = 12;
constexpr std::uint64_t kRetrieveStream = 13;
constexpr std::uint64_t kPrototypeStream = 14;

}  // namespace

void TrainConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 0.5)) throw ConfigError("cscl: alpha must lie in [0, 0.5)");
  if (!(eta > 0.0)) throw ConfigError("cscl: eta must be > 0");
  if (retrieve < 1) throw ConfigError("cscl: T must be at least 1");
  if (prototypes < 1) throw ConfigError("cscl: K must be at least 1");
  if (feature_dim < 2) throw ConfigError("cscl: feature dimension must be at least 2");
  if (batch_size < 1) throw ConfigError("cscl: batch size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("cscl: learning rate must be > 0");
  if (kmeans_iters < 1) throw ConfigError("cscl: k-means needs at least one iteration");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"feature_dim", cfg.feature_dim},
          {"alpha", cfg.alpha},
          {"eta", cfg.eta},
          {"T", cfg.retrieve},
          {"K", cfg.prototypes},
          {"kmeans_iters", cfg.kmeans_iters},
          {"warmup_epochs", cfg.warmup_epochs},
          {"use_acl", cfg.use_acl},
          {"use_contrastive", cfg.use_contrastive},
          {"seed", cfg.seed.value}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig cfg) {
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.eta = j.value("eta", cfg.eta);
    cfg.retrieve = j.value("T", cfg.retrieve);
    cfg.prototypes = j.value("K", cfg.prototypes);
    cfg.kmeans_iters = j.value("kmeans_iters", cfg.kmeans_iters);
    cfg.warmup_epochs = j.value("warmup_epochs", cfg.warmup_epochs);
    cfg.use_acl = j.value("use_acl", cfg.use_acl);
    cfg.use_contrastive = j.value("use_contrastive", cfg.use_contrastive);
    cfg.seed.value = j.value("seed", cfg.seed.value);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad cscl config: ") + e.what());
  }
  return cfg;
}

// ---- parameters -------------------------------------------------------------

ExtractorParams ExtractorParams::zeros(std::size_t categories, std::size_t input_dim, std::size_t feature_dim) {
  ExtractorParams p;
  p.weights.assign(categories, Mat(feature_dim, input_dim));
  p.bias = Mat(categories, feature_dim);
  p.cls_weight = Mat(categories, feature_dim);
  p.cls_bias.assign(categories, 0.0);
  return p;
}

ExtractorParams ExtractorParams::initial(std::size_t categories, std::size_t input_dim, std::size_t feature_dim,
                                         RngSeed seed) {
  ExtractorParams p = zeros(categories, input_dim, feature_dim);
  Rng rng = make_rng(derive_seed(seed, kInitStream));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mat base(feature_dim, input_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (double& w : base.data()) w = scale * gauss(rng);
  for (auto& w : p.weights) w = base;
  const double cls_scale = 0.1 / std::sqrt(static_cast<double>(feature_dim));
  for (double& v : p.cls_weight.data()) v = cls_scale * gauss(rng);
  return p;
}

std::size_t ExtractorParams::size() const noexcept {
  const std::size_t cats = categories();
  return cats * feature_dim() * input_dim() + 2 * cats * feature_dim() + cats;
}

Vec ExtractorParams::flatten() const {
  Vec out;
  out.reserve(size());
  for (const auto& w : weights) out.insert(out.end(), w.data().begin(), w.data().end());
  out.insert(out.end(), bias.data().begin(), bias.data().end());
  out.insert(out.end(), cls_weight.data().begin(), cls_weight.data().end());
  out.insert(out.end(), cls_bias.begin(), cls_bias.end());
  return out;
}

void ExtractorParams::assign(std::span<const double> flat) {
  if (flat.size() != size()) throw DomainError("extractor params: flat vector has the wrong length");
  auto it = flat.begin();
  const auto take = [&](std::span<double> dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  for (auto& w : weights) take(w.data());
  take(bias.data());
  take(cls_weight.data());
  take(cls_bias);
}

void ExtractorParams::add_scaled(const ExtractorParams& other, double scale) {
  const auto axpy = [scale](std::span<double> dst, std::span<const double> src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
  };
  for (std::size_t c = 0; c < weights.size(); ++c) axpy(weights[c].data(), other.weights[c].data());
  axpy(bias.data(), other.bias.data());
  axpy(cls_weight.data(), other.cls_weight.data());
  axpy(cls_bias, other.cls_bias);
}

bool ExtractorParams::all_finite() const noexcept {
  return std::all_of(weights.begin(), weights.end(), [](const Mat& w) { return w.all_finite(); }) &&
         bias.all_finite() && cls_weight.all_finite() &&
         std::all_of(cls_bias.begin(), cls_bias.end(), [](double v) { return std::isfinite(v); });
}

nlohmann::json to_json(const ExtractorParams& params) {
  nlohmann::json weights = nlohmann::json::array();
  for (const auto& w : params.weights) weights.push_back(io::mat_to_json(w));
  return {{"categories", params.categories()},
          {"input_dim", params.input_dim()},
          {"feature_dim", params.feature_dim()},
          {"weights", weights},
          {"bias", io::mat_to_json(params.bias)},
          {"cls_weight", io::mat_to_json(params.cls_weight)},
          {"cls_bias", params.cls_bias}};
}

ExtractorParams extractor_params_from_json(const nlohmann::json& j) {
  try {
    const auto cats = j.at("categories").get<std::size_t>();
    const auto dim = j.at("input_dim").get<std::size_t>();
    const auto fdim = j.at("feature_dim").get<std::size_t>();
    ExtractorParams p;
    for (const auto& w : j.at("weights")) p.weights.push_back(io::mat_from_json(w));
    p.bias = io::mat_from_json(j.at("bias"));
    p.cls_weight = io::mat_from_json(j.at("cls_weight"));
    p.cls_bias = j.at("cls_bias").get<Vec>();
    bool ok = p.weights.size() == cats && p.bias.rows() == cats && p.bias.cols() == fdim &&
              p.cls_weight.rows() == cats && p.cls_weight.cols() == fdim && p.cls_bias.size() == cats;
    for (const auto& w : p.weights) ok = ok && w.rows() == fdim && w.cols() == dim;
    if (!ok) throw SchemaError("extractor params: arrays disagree with the declared shape");
    if (!p.all_finite()) throw SchemaError("extractor params: non-finite value");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("extractor params: ") + e.what());
  }
}

// ---- forward pieces ----------------------------------------------------------

namespace {

// Pre-activations W_c x + b_c as C x D_f.
Mat preactivations(const ExtractorParams& params, std::span<const double> x) {
  if (x.size() != params.input_dim()) {
    throw DomainError("extract_features: input has dimension " + std::to_string(x.size()) + ", expected " +
                      std::to_string(params.input_dim()));
  }
  const std::size_t cats = params.categories();
  const std::size_t fdim = params.feature_dim();
  Mat h(cats, fdim);
  for (std::size_t c = 0; c < cats; ++c) {
    for (std::size_t k = 0; k < fdim; ++k) h(c, k) = dot(params.weights[c].row(k), x) + params.bias(c, k);
  }
  return h;
}

Mat relu(Mat h) {
  for (double& v : h.data()) v = std::max(v, 0.0);
  return h;
}

}  // namespace

Mat extract_features(const ExtractorParams& params, std::span<const double> x) {
  return relu(preactivations(params, x));
}

Vec aux_classify(const ExtractorParams& params, const Mat& features) {
  if (features.rows() != params.categories() || features.cols() != params.feature_dim()) {
    throw DomainError("aux_classify: features do not match the parameters");
  }
  Vec p(params.categories());
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = sigmoid(dot(params.cls_weight.row(c), features.row(c)) + params.cls_bias[c]);
  }
  return p;
}

double contrastive_pair_loss(std::span<const double> f_m, std::span<const double> f_n, bool y_m, bool y_n) {
  const double s = cosine(f_m, f_n);
  return y_m && y_n ? 1.0 - s : 1.0 + s;
}

Vec warmup_targets(std::span<const std::uint8_t> labels, double alpha) {
  const bool all = std::all_of(labels.begin(), labels.end(), [](std::uint8_t b) { return b != 0; });
  if (all) return Vec(labels.size(), 1.0 - alpha);
  return mlls_targets(labels, alpha);
}

CsclLoss cscl_batch_loss(const ExtractorParams& params, const Mat& inputs, const LabelMatrix& labels,
                         const Mat& ins, const Mat& pro, const TrainConfig& cfg, bool want_grad) {
  const std::size_t batch = inputs.rows();
  const std::size_t cats = params.categories();
  const std::size_t fdim = params.feature_dim();
  if (batch == 0) throw DomainError("cscl: empty batch");
  if (labels.rows() != batch || labels.cols() != cats || ins.rows() != batch || ins.cols() != cats ||
      pro.rows() != batch || pro.cols() != cats) {
    throw DomainError("cscl: batch targets do not match the inputs");
  }

  std::vector<Mat> pre(batch), feat(batch);
  for (std::size_t m = 0; m < batch; ++m) {
    pre[m] = preactivations(params, inputs.row(m));
    feat[m] = relu(pre[m]);
  }

  CsclLoss out;
  std::vector<Mat> dfeat;
  if (want_grad) {
    out.grad = ExtractorParams::zeros(cats, params.input_dim(), fdim);
    dfeat.assign(batch, Mat(cats, fdim));
  }
  const double b = static_cast<double>(batch);

  if (cfg.use_acl) {
    for (std::size_t m = 0; m < batch; ++m) {
      const Vec p = aux_classify(params, feat[m]);
      out.acl += cfg.eta / b * (bce(p, ins.row(m)) + bce(p, pro.row(m)));
      if (!want_grad) continue;
      for (std::size_t c = 0; c < cats; ++c) {
        const double dz = cfg.eta / b * (2.0 * p[c] - ins(m, c) - pro(m, c));
        const auto f = feat[m].row(c);
        auto gv = out.grad.cls_weight.row(c);
        auto df = dfeat[m].row(c);
        const auto v = params.cls_weight.row(c);
        for (std::size_t k = 0; k < fdim; ++k) {
          gv[k] += dz * f[k];
          df[k] += dz * v[k];
        }
        out.grad.cls_bias[c] += dz;
      }
    }
  }

  if (cfg.use_contrastive && batch > 1) {
    const double w = 1.0 / (b * (b - 1.0));
    Mat unit(batch, fdim);
    Vec norms(batch);
    Vec sum_u(fdim);
    for (std::size_t c = 0; c < cats; ++c) {
      for (std::size_t m = 0; m < batch; ++m) {
        const auto f = feat[m].row(c);
        norms[m] = norm(f);
        auto u = unit.row(m);
        for (std::size_t k = 0; k < fdim; ++k) u[k] = norms[m] > 0.0 ? f[k] / norms[m] : 0.0;
      }
      for (std::size_t m = 0; m < batch; ++m) {
        // sign of d l / d s: -1 for a co-positive pair, +1 otherwise.
        std::fill(sum_u.begin(), sum_u.end(), 0.0);
        double sum_s = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
          if (n == m) continue;
          const double s = std::clamp(dot(unit.row(m), unit.row(n)), -1.0, 1.0);
          const bool both = labels(m, c) && labels(n, c);
          out.contrastive += w * (both ? 1.0 - s : 1.0 + s);
          if (!want_grad || norms[m] == 0.0 || norms[n] == 0.0) continue;
          const double sgn = both ? -1.0 : 1.0;
          const auto un = unit.row(n);
          for (std::size_t k = 0; k < fdim; ++k) sum_u[k] += sgn * un[k];
          sum_s += sgn * s;
        }
        if (!want_grad || norms[m] == 0.0) continue;
        // Each unordered pair appears twice in the sum, hence 2w.
        const double scale = 2.0 * w / norms[m];
        auto df = dfeat[m].row(c);
        const auto um = unit.row(m);
        for (std::size_t k = 0; k < fdim; ++k) df[k] += scale * (sum_u[k] - sum_s * um[k]);
      }
    }
  }
  out.total = out.acl + out.contrastive;

  if (want_grad) {
    for (std::size_t m = 0; m < batch; ++m) {
      const auto x = inputs.row(m);
      for (std::size_t c = 0; c < cats; ++c) {
        for (std::size_t k = 0; k < fdim; ++k) {
          if (pre[m](c, k) <= 0.0) continue;
          const double dh = dfeat[m](c, k);
          if (dh == 0.0) continue;
          out.grad.bias(c, k) += dh;
          auto gw = out.grad.weights[c].row(k);
          for (std::size_t d = 0; d < x.size(); ++d) gw[d] += dh * x[d];
        }
      }
    }
  }
  return out;
}

FeatureBank compute_bank(const ExtractorParams& params, const Dataset& ds) {
  FeatureBank bank(ds.ids, ds.labels, params.feature_dim());
  for (std::size_t n = 0; n < ds.size(); ++n) bank.set_sample(n, extract_features(params, ds.inputs.row(n)));
  return bank;
}

CsclResult train_cscl(const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw DomainError("train_cscl: empty dataset");
  const std::size_t cats = ds.categories();
  const std::size_t dim = ds.inputs.cols();

  CsclResult result;
  result.params = ExtractorParams::initial(cats, dim, cfg.feature_dim, cfg.seed);
  ExtractorParams& params = result.params;
  FeatureBank bank = compute_bank(params, ds);

  std::vector<std::size_t> order(ds.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool warm = epoch < cfg.warmup_epochs;
    PrototypeBank protos;
    if (!warm) protos = build_prototypes(bank, cfg.prototypes, derive_seed(derive_seed(cfg.seed, kPrototypeStream), epoch),
                                         cfg.kmeans_iters);
    const RngSeed retrieve_seed = derive_seed(derive_seed(cfg.seed, kRetrieveStream), epoch);

    std::iota(order.begin(), order.end(), 0);
    Rng shuffle = make_rng(derive_seed(derive_seed(cfg.seed, kShuffleStream), epoch));
    std::shuffle(order.begin(), order.end(), shuffle);

    CsclEpoch summary;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::size_t size = end - start;
      Mat inputs(size, dim), ins(size, cats), pro(size, cats);
      LabelMatrix labels(size, cats);
      std::vector<Mat> feats(size);
      for (std::size_t i = 0; i < size; ++i) {
        const std::size_t n = order[start + i];
        feats[i] = extract_features(params, ds.inputs.row(n));
        std::copy(ds.inputs.row(n).begin(), ds.inputs.row(n).end(), inputs.row(i).begin());
        for (std::size_t c = 0; c < cats; ++c) labels.set(i, c, ds.labels(n, c));
        Vec y_ins, y_pro;
        if (warm) {
          y_ins = warmup_targets(ds.labels.row(n), cfg.alpha);
          y_pro = y_ins;
        } else {
          // Soft labels come from this step's own features; they are targets,
          // not part of the differentiated graph.
          const Mat& query = feats[i];
          const auto seed = derive_seed(retrieve_seed, static_cast<std::uint64_t>(ds.ids[n]));
          y_ins = soften(ds.labels.row(n), instance_corr(query, bank, cfg.retrieve, seed), cfg.alpha).values;
          y_pro = soften(ds.labels.row(n), proto_corr(query, protos), cfg.alpha).values;
        }
        std::copy(y_ins.begin(), y_ins.end(), ins.row(i).begin());
        std::copy(y_pro.begin(), y_pro.end(), pro.row(i).begin());
      }

      const CsclLoss loss = cscl_batch_loss(params, inputs, labels, ins, pro, cfg, true);
      if (!std::isfinite(loss.total)) {
        throw TrainingError("cscl diverged: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batches + 1));
      }
      // Bank rows for this batch are refreshed from the features just used.
      for (std::size_t i = 0; i < size; ++i) bank.set_sample(order[start + i], feats[i]);
      params.add_scaled(loss.grad, -cfg.learning_rate);
      if (!params.all_finite()) {
        throw TrainingError("cscl diverged: non-finite parameters at epoch " + std::to_string(epoch + 1) +
                            ", batch " + std::to_string(batches + 1));
      }
      summary.acl += loss.acl;
      summary.contrastive += loss.contrastive;
      summary.total += loss.total;
      ++batches;
    }
    const auto nb = static_cast<double>(batches);
    result.history.push_back({summary.acl / nb, summary.contrastive / nb, summary.total / nb});
  }
  result.bank = compute_bank(params, ds);
  return result;
}

}  // namespace mlcc
