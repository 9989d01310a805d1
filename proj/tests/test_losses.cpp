#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mlcc/error.hpp"
#include "mlcc/losses.hpp"
#include "support.hpp"

using namespace mlcc;
using mlcc::testing::random_labels;
using mlcc::testing::random_mat;
using mlcc::testing::random_vec;

namespace {

double entropy2(double p) { return -(p * std::log(p) + (1.0 - p) * std::log(1.0 - p)); }

Mat sigmoid_of(const Mat& z) {
  Mat p(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.data().size(); ++i) p.data()[i] = sigmoid(z.data()[i]);
  return p;
}

Mat permute_rows(const Mat& m, const std::vector<std::size_t>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) std::copy(m.row(perm[i]).begin(), m.row(perm[i]).end(), out.row(i).begin());
  return out;
}

LabelMatrix permute_rows(const LabelMatrix& y, const std::vector<std::size_t>& perm) {
  LabelMatrix out(y.rows(), y.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t c = 0; c < y.cols(); ++c) out.set(i, c, y(perm[i], c));
  }
  return out;
}

// Soft targets for dclr with the same support as the hard labels.
Mat soft_like(Rng& rng, const LabelMatrix& y, double alpha) {
  Mat t(y.rows(), y.cols());
  std::uniform_real_distribution<double> u(0.0, alpha);
  for (std::size_t i = 0; i < y.rows(); ++i) {
    for (std::size_t c = 0; c < y.cols(); ++c) t(i, c) = y(i, c) ? 1.0 - alpha : u(rng);
  }
  return t;
}

// Random labels with at least one negative per row (mlls needs M < C).
LabelMatrix partial_labels(Rng& rng, std::size_t rows, std::size_t cols) {
  LabelMatrix y = random_labels(rng, rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    if (y.count_row(i) == cols) y.set(i, i % cols, false);
  }
  return y;
}

LossConfig test_config(LossKind kind, std::size_t cols) {
  LossConfig cfg = LossConfig::for_kind(kind);
  if (kind == LossKind::mbls) cfg.margin = 1.0;  // keep the penalty active for random logits
  if (kind == LossKind::dwbl) {
    cfg.class_counts.resize(cols);
    for (std::size_t c = 0; c < cols; ++c) cfg.class_counts[c] = 5.0 + 40.0 * static_cast<double>(c);
    cfg.beta = 0.99;
  }
  return cfg;
}

}  // namespace

TEST_CASE("bce hand values") {
  const Vec y = {1.0, 0.0}, p = {0.5, 0.5};
  CHECK(bce(p, y) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  const Vec soft = {0.95, 0.05};
  CHECK(bce(soft, soft) == doctest::Approx(2.0 * entropy2(0.95)).epsilon(1e-14));
  CHECK(bce(soft, soft) == doctest::Approx(0.3969).epsilon(1e-4));
  const Vec hard = {1.0, 0.0, 1.0, 1.0};
  CHECK(bce(hard, hard) <= 4 * 1e-11);
  CHECK(bce(hard, hard) >= 0.0);
  CHECK_THROWS_AS(bce(p, hard), DomainError);
}

TEST_CASE("label smoothing targets") {
  const std::vector<std::uint8_t> one_hot = {0, 0, 1, 0, 0};
  const Vec ls = ls_targets(one_hot, 0.1);
  for (std::size_t c = 0; c < 5; ++c) CHECK(ls[c] == doctest::Approx(c == 2 ? 0.9 : 0.025).epsilon(1e-15));

  const std::vector<std::uint8_t> two = {1, 0, 0, 1, 0, 0};
  const Vec ml = mlls_targets(two, 0.1);
  for (std::size_t c = 0; c < 6; ++c) CHECK(ml[c] == doctest::Approx(two[c] ? 0.9 : 0.05).epsilon(1e-15));

  const std::vector<std::uint8_t> full = {1, 1, 1};
  CHECK_THROWS_AS(mlls_targets(full, 0.1), DomainError);

  Rng rng = make_rng(RngSeed{2});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cats = 2 + static_cast<std::size_t>(trial % 7);
    std::vector<std::uint8_t> y(cats, 0);
    y[static_cast<std::size_t>(trial) % cats] = 1;
    const double alpha = 0.3 * random_vec(rng, 1, 0.0, 1.0)[0];
    CHECK(mlls_targets(y, alpha) == ls_targets(y, alpha));
    const Vec zero = mlls_targets(y, 0.0);
    for (std::size_t c = 0; c < cats; ++c) CHECK(zero[c] == static_cast<double>(y[c]));
  }
}

TEST_CASE("focal hand values and reduction to bce") {
  const Vec y = {1.0}, p = {0.9};
  CHECK(focal(p, y, 2.0) == doctest::Approx(-0.01 * std::log(0.9)).epsilon(1e-14));
  CHECK(focal(p, y, 2.0) == doctest::Approx(1.0536e-3).epsilon(1e-4));
  CHECK_THROWS_AS(focal(p, y, -1.0), DomainError);

  Rng rng = make_rng(RngSeed{3});
  for (int trial = 0; trial < 100; ++trial) {
    const Vec q = random_vec(rng, 6, 0.001, 0.999);
    Vec t(6);
    for (std::size_t c = 0; c < 6; ++c) t[c] = q[(c + 1) % 6] > 0.5 ? 1.0 : 0.0;
    CHECK(std::abs(focal(q, t, 0.0) - bce(q, t)) <= 1e-12);
    CHECK(focal(q, t, 2.0) >= 0.0);
    CHECK(focal(q, t, 2.0) <= bce(q, t) + 1e-15);
  }
}

TEST_CASE("flsd schedule") {
  const FlsdSchedule s;
  CHECK(flsd_gamma(0.1, s) == 5.0);
  CHECK(flsd_gamma(0.5, s) == 3.0);
  CHECK(flsd_gamma(0.2, s) == 3.0);
  const Vec y = {1.0, 0.0}, p = {0.1, 0.5};
  const double want = focal(Vec{0.1}, Vec{1.0}, 5.0) + focal(Vec{0.5}, Vec{0.0}, 3.0);
  CHECK(flsd(p, y, s) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("dca auxiliary term") {
  Mat ones(2, 3, 1.0);
  LabelMatrix all(2, 3);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 3; ++c) all.set(i, c, true);
  }
  CHECK(dca_aux(ones, all) == 0.0);

  // confidence 0.8 everywhere, three of five correct
  const Mat p(1, 5, 0.8);
  LabelMatrix y(1, 5);
  for (std::size_t c = 0; c < 3; ++c) y.set(0, c, true);
  CHECK(dca_aux(p, y) == doctest::Approx(0.2).epsilon(1e-14));

  // complementing every prediction and label leaves it unchanged
  Rng rng = make_rng(RngSeed{4});
  const Mat q = random_mat(rng, 6, 4, 0.0, 1.0);
  const LabelMatrix yy = random_labels(rng, 6, 4);
  Mat qc = q;
  LabelMatrix yc(6, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      qc(i, c) = 1.0 - q(i, c);
      yc.set(i, c, !yy(i, c));
    }
  }
  CHECK(dca_aux(qc, yc) == doctest::Approx(dca_aux(q, yy)).epsilon(1e-12));
}

TEST_CASE("mmce auxiliary term") {
  Mat ones(3, 2, 1.0);
  LabelMatrix all(3, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 2; ++c) all.set(i, c, true);
  }
  CHECK(mmce_aux(ones, all, 0.4) == 0.0);

  // residuals (0, -1) at equal confidence: sqrt(1 * k(1, 1)) / n with n = 2
  const Mat two(1, 2, 1.0);
  LabelMatrix y(1, 2);
  y.set(0, 0, true);
  for (double width : {0.1, 0.4, 3.0}) CHECK(mmce_aux(two, y, width) == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(mmce_aux(two, y, 0.0), DomainError);
  CHECK_THROWS_AS(mmce_aux(Mat(1, 1, 0.5), LabelMatrix(1, 1), 0.4), DomainError);
}

TEST_CASE("mmce batch recursion equals the direct double sum") {
  Rng rng = make_rng(RngSeed{5});
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 2 + static_cast<std::size_t>(trial % 9);
    const Mat z = random_mat(rng, rows, 3, -4.0, 4.0);
    const LabelMatrix y = random_labels(rng, rows, 3);
    LossConfig cfg = LossConfig::for_kind(LossKind::mmce);
    cfg.kernel_width = 0.2 + 0.1 * (trial % 5);
    const LossValue v = evaluate_loss(cfg, z, BatchTargets{&y, nullptr, nullptr}, false);
    const double direct = mmce_aux(sigmoid_of(z), y, cfg.kernel_width);
    CHECK(v.components.at(1).first == "mmce");
    CHECK(std::abs(v.components.at(1).second - direct) <= 1e-12);
  }
}

TEST_CASE("mdca auxiliary term") {
  const Mat p(2, 2, {0.9, 0.3, 0.5, 0.5});
  LabelMatrix y(2, 2);
  y.set(0, 0, true);
  y.set(1, 1, true);
  // column means p (0.7, 0.4), y (0.5, 0.5) -> (0.2 + 0.1) / 2
  CHECK(mdca_aux(p, y) == doctest::Approx(0.15).epsilon(1e-14));
  // p means (0.7, 0.4), y means (0.5, 0.4)
  Mat p10(10, 2);
  LabelMatrix y10(10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    p10(i, 0) = 0.7;
    p10(i, 1) = 0.4;
    y10.set(i, 0, i < 5);
    y10.set(i, 1, i < 4);
  }
  CHECK(mdca_aux(p10, y10) == doctest::Approx(0.1).epsilon(1e-14));

  const Mat exact(2, 1, {1.0, 0.0});
  LabelMatrix ye(2, 1);
  ye.set(0, 0, true);
  CHECK(mdca_aux(exact, ye) == 0.0);
}

TEST_CASE("margin penalty") {
  const Vec flat = {2.0, 2.0, 2.0};
  CHECK(margin_penalty(flat, 0.0) == 0.0);
  const Vec two = {5.0, 0.0};
  CHECK(margin_penalty(two, 3.0) == 2.0);
  Rng rng = make_rng(RngSeed{6});
  for (int trial = 0; trial < 50; ++trial) {
    const Vec z = random_vec(rng, 5, -6.0, 6.0);
    Vec shifted = z;
    for (double& v : shifted) v += 17.25;
    CHECK(std::abs(margin_penalty(shifted, 2.0) - margin_penalty(z, 2.0)) <= 1e-12);
    CHECK(margin_penalty(z, 2.0) >= 0.0);
  }
  const Vec y = {1.0, 0.0};
  CHECK(mbls(two, y, 3.0, 0.1) == doctest::Approx(bce(Vec{sigmoid(5.0), 0.5}, y) + 0.2).epsilon(1e-14));
}

TEST_CASE("dwbl weights and values") {
  const Vec uniform = {50.0, 50.0, 50.0};
  for (double w : dwbl_weights(uniform, 0.999)) CHECK(w == doctest::Approx(1.0).epsilon(1e-15));
  const Vec skewed = {10.0, 1000.0};
  const Vec w = dwbl_weights(skewed, 0.999);
  CHECK(w[0] > w[1]);
  CHECK((w[0] + w[1]) / 2.0 == doctest::Approx(1.0).epsilon(1e-15));
  const Vec zero = {10.0, 0.0};
  CHECK_THROWS_AS(dwbl_weights(zero, 0.999), DomainError);
  CHECK_THROWS_AS(dwbl_weights(uniform, 1.0), DomainError);

  const Vec y = {1.0};
  const Vec ones = {1.0};
  CHECK(dwbl(Vec{1.0 - 1e-9}, y, ones) < 1e-8);
  const double pt = 0.3;
  CHECK(dwbl(Vec{pt}, y, Vec{2.0}) == doctest::Approx(-2.0 * std::pow(1.0 - pt, pt) * std::log(pt)).epsilon(1e-14));
}

TEST_CASE("dclr and acl compose bce") {
  const Vec p = {0.9, 0.1};
  const Vec ins = {0.95, 0.035}, pro = {0.95, 0.05};
  const double want = 0.5 * (bce(p, ins) + bce(p, pro));
  CHECK(dclr_cls(p, ins, pro, 0.5) == doctest::Approx(want).epsilon(1e-15));
  CHECK(acl(p, ins, pro, 0.5) == dclr_cls(p, ins, pro, 0.5));
  CHECK(dclr_cls(p, ins, ins, 0.5) == doctest::Approx(2.0 * 0.5 * bce(p, ins)).epsilon(1e-15));
  const Vec hard = {1.0, 0.0};
  CHECK(dclr_cls(hard, hard, hard, 0.5) <= 1e-11);
  CHECK_THROWS_AS(dclr_cls(p, ins, pro, 0.0), DomainError);
  const Vec shorter = {0.5};
  CHECK_THROWS_AS(dclr_cls(p, shorter, pro, 0.5), DomainError);
}

TEST_CASE("batch evaluation agrees with the row-level definitions") {
  Rng rng = make_rng(RngSeed{7});
  const std::size_t rows = 6, cols = 4;
  const Mat z = random_mat(rng, rows, cols, -3.0, 3.0);
  const Mat p = sigmoid_of(z);
  const LabelMatrix y = partial_labels(rng, rows, cols);
  const Mat ins = soft_like(rng, y, 0.05), pro = soft_like(rng, y, 0.05);
  const BatchTargets targets{&y, &ins, &pro};

  for (LossKind kind : all_loss_kinds()) {
    const LossConfig cfg = test_config(kind, cols);
    const LossValue v = evaluate_loss(cfg, z, targets, false);
    double row_sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      const Mat yh = y.as_mat();
      const auto pi = p.row(i);
      const auto yi = yh.row(i);
      switch (kind) {
        case LossKind::nll:
        case LossKind::dca:
        case LossKind::mmce:
        case LossKind::mdca: row_sum += bce(pi, yi); break;
        case LossKind::ls: row_sum += bce(pi, ls_targets(y.row(i), cfg.alpha)); break;
        case LossKind::mlls: row_sum += bce(pi, mlls_targets(y.row(i), cfg.alpha)); break;
        case LossKind::fl: row_sum += focal(pi, yi, cfg.gamma); break;
        case LossKind::flsd: row_sum += flsd(pi, yi, cfg.flsd); break;
        case LossKind::mbls: row_sum += mbls(z.row(i), yi, cfg.margin, cfg.aux_weight); break;
        case LossKind::dwbl: row_sum += dwbl(pi, yi, dwbl_weights(cfg.class_counts, cfg.beta)); break;
        case LossKind::dclr: row_sum += dclr_cls(pi, ins.row(i), pro.row(i), cfg.eta); break;
      }
    }
    double want = row_sum / rows;
    if (kind == LossKind::dca) want += cfg.aux_weight * dca_aux(p, y);
    if (kind == LossKind::mmce) want += cfg.aux_weight * mmce_aux(p, y, cfg.kernel_width);
    if (kind == LossKind::mdca) want += cfg.aux_weight * mdca_aux(p, y);
    INFO("kind " << to_string(kind));
    CHECK(std::abs(v.total - want) <= 1e-12 * std::max(1.0, std::abs(want)));
    double parts = 0.0;
    for (const auto& [name, value] : v.components) parts += value;
    CHECK(v.total == parts);
    CHECK(v.grad.empty());
  }
}

TEST_CASE("every loss kind passes the finite-difference gradient check") {
  Rng rng = make_rng(RngSeed{8});
  const std::size_t rows = 5, cols = 3;
  for (LossKind kind : all_loss_kinds()) {
    const LossConfig cfg = test_config(kind, cols);
    double worst = 0.0;
    for (int draw = 0; draw < 20; ++draw) {
      const Mat z0 = random_mat(rng, rows, cols, -4.0, 4.0);
      const LabelMatrix y = partial_labels(rng, rows, cols);
      const Mat ins = soft_like(rng, y, 0.1), pro = soft_like(rng, y, 0.1);
      const BatchTargets targets{&y, &ins, &pro};
      const LossValue v = evaluate_loss(cfg, z0, targets, true);
      const ScalarFn f = [&](std::span<const double> flat) {
        const Mat z(rows, cols, Vec(flat.begin(), flat.end()));
        return evaluate_loss(cfg, z, targets, false).total;
      };
      worst = std::max(worst, grad_check(f, z0.data(), v.grad.data()));
    }
    INFO("kind " << to_string(kind));
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("batch losses are invariant to sample order") {
  Rng rng = make_rng(RngSeed{9});
  const std::size_t rows = 7, cols = 3;
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat z = random_mat(rng, rows, cols, -3.0, 3.0);
    const LabelMatrix y = partial_labels(rng, rows, cols);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Mat zp = permute_rows(z, perm);
    const LabelMatrix yp = permute_rows(y, perm);
    const Mat p = sigmoid_of(z), pp = sigmoid_of(zp);
    CHECK(std::abs(dca_aux(p, y) - dca_aux(pp, yp)) <= 1e-12);
    CHECK(std::abs(mmce_aux(p, y, 0.4) - mmce_aux(pp, yp, 0.4)) <= 1e-12);
    CHECK(std::abs(mdca_aux(p, y) - mdca_aux(pp, yp)) <= 1e-12);
    for (LossKind kind : {LossKind::dca, LossKind::mmce, LossKind::mdca}) {
      const LossConfig cfg = LossConfig::for_kind(kind);
      const double a = evaluate_loss(cfg, z, BatchTargets{&y, nullptr, nullptr}, false).total;
      const double b = evaluate_loss(cfg, zp, BatchTargets{&yp, nullptr, nullptr}, false).total;
      CHECK(std::abs(a - b) <= 1e-12);
    }
  }
}

TEST_CASE("losses are nonnegative and finite at saturated logits") {
  Rng rng = make_rng(RngSeed{10});
  const Mat z = random_mat(rng, 4, 3, -60.0, 60.0);
  const LabelMatrix y = partial_labels(rng, 4, 3);
  const Mat ins = soft_like(rng, y, 0.05), pro = soft_like(rng, y, 0.05);
  for (LossKind kind : all_loss_kinds()) {
    const LossValue v = evaluate_loss(test_config(kind, 3), z, BatchTargets{&y, &ins, &pro}, true);
    INFO("kind " << to_string(kind));
    CHECK(std::isfinite(v.total));
    CHECK(v.total >= 0.0);
    CHECK(v.grad.all_finite());
  }
}

TEST_CASE("dclr reads only soft targets") {
  Rng rng = make_rng(RngSeed{11});
  const Mat z = random_mat(rng, 3, 3);
  const LabelMatrix y = random_labels(rng, 3, 3);
  const Mat ins = soft_like(rng, y, 0.05);
  const LossConfig cfg = LossConfig::for_kind(LossKind::dclr);
  const double with_hard = evaluate_loss(cfg, z, BatchTargets{&y, &ins, &ins}, false).total;
  const double without = evaluate_loss(cfg, z, BatchTargets{nullptr, &ins, &ins}, false).total;
  CHECK(with_hard == without);
  CHECK_THROWS_AS(evaluate_loss(cfg, z, BatchTargets{&y, nullptr, nullptr}, false), DomainError);
  CHECK_THROWS_AS(evaluate_loss(LossConfig::for_kind(LossKind::nll), z, BatchTargets{}, false), DomainError);
}

TEST_CASE("loss config names, validation and JSON") {
  for (LossKind kind : all_loss_kinds()) CHECK(parse_loss_kind(to_string(kind)) == kind);
  CHECK_THROWS_AS(parse_loss_kind("hinge"), ConfigError);
  CHECK(LossConfig::for_kind(LossKind::mbls).aux_weight == 0.1);
  CHECK(LossConfig::for_kind(LossKind::dca).aux_weight == 1.0);

  LossConfig bad = LossConfig::for_kind(LossKind::fl);
  bad.gamma = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = LossConfig::for_kind(LossKind::mmce);
  bad.kernel_width = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  LossConfig cfg = LossConfig::for_kind(LossKind::flsd);
  cfg.flsd.threshold = 0.3;
  cfg.alpha = 0.07;
  const LossConfig back = loss_config_from_json(to_json(cfg));
  CHECK(back.kind == cfg.kind);
  CHECK(back.alpha == cfg.alpha);
  CHECK(back.flsd.threshold == 0.3);
  CHECK(loss_config_from_json(nlohmann::json("dclr")).kind == LossKind::dclr);
  CHECK_THROWS_AS(loss_config_from_json(nlohmann::json{{"kind", 3}}), ConfigError);
}
