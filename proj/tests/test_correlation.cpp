#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mlcc/correlation.hpp"
#include "mlcc/error.hpp"
#include "mlcc/feature_bank.hpp"
#include "mlcc/io.hpp"
#include "support.hpp"

using namespace mlcc;
using mlcc::testing::random_labels;
using mlcc::testing::random_mat;
using mlcc::testing::random_vec;
using mlcc::testing::scratch_dir;

namespace {

FeatureBank random_bank(Rng& rng, std::size_t n, std::size_t cats, std::size_t dim) {
  LabelMatrix y = random_labels(rng, n, cats, 0.4);
  // every category needs a positive somewhere
  for (std::size_t c = 0; c < cats; ++c) y.set(c % n, c, true);
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::int64_t{100});
  FeatureBank bank(ids, y, dim);
  for (std::size_t i = 0; i < n; ++i) bank.set_sample(i, random_mat(rng, cats, dim, 0.0, 1.0));
  return bank;
}

void check_row_stochastic(const CorrelationMatrix& r) {
  const std::size_t c = r.values.rows();
  for (std::size_t i = 0; i < c; ++i) {
    CHECK(r.values(i, i) == 0.0);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      CHECK(r.values(i, j) >= 0.0);
      sum += r.values(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

CorrelationMatrix random_corr(Rng& rng, std::size_t c) {
  const Mat raw = random_mat(rng, c, c, -3.0, 3.0);
  return normalize_correlation(raw, CorrelationKind::instance);
}

// Soft label as a literal double loop over the case split.
Vec brute_soften(const std::vector<std::uint8_t>& y, const Mat& r, double alpha) {
  const std::size_t c = y.size();
  Vec out(c, 0.0);
  for (std::size_t col = 0; col < c; ++col) {
    if (y[col] == 1) {
      out[col] = 1.0 - alpha;
      continue;
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += alpha * r(k, col) * static_cast<double>(y[k]);
    out[col] = acc;
  }
  return out;
}

}  // namespace

TEST_CASE("two categories always give the swap matrix") {
  Rng rng = make_rng(RngSeed{1});
  const FeatureBank bank = random_bank(rng, 10, 2, 4);
  const Mat query = random_mat(rng, 2, 4, 0.0, 1.0);
  const auto r = instance_corr(query, bank, 4, RngSeed{2});
  CHECK(r.values == Mat(2, 2, {0.0, 1.0, 1.0, 0.0}));
  const auto protos = build_prototypes(bank, 2, RngSeed{3});
  CHECK(proto_corr(query, protos).values == Mat(2, 2, {0.0, 1.0, 1.0, 0.0}));
}

TEST_CASE("row softmax of (ln 2, ln 1) gives (2/3, 1/3)") {
  const Mat raw(3, 3, {7.0, std::log(2.0), std::log(1.0), 0.0, 0.0, 0.0, 1.0, 1.0, 5.0});
  const auto r = normalize_correlation(raw, CorrelationKind::instance);
  CHECK(r.values(0, 0) == 0.0);
  CHECK(r.values(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(r.values(0, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(r.values(2, 0) == doctest::Approx(0.5));
  check_row_stochastic(r);
}

TEST_CASE("identical features everywhere give uniform rows") {
  const std::size_t cats = 5, dim = 3;
  LabelMatrix y(8, cats);
  for (std::size_t i = 0; i < 8; ++i) y.set(i, i % cats, true);
  std::vector<std::int64_t> ids(8);
  std::iota(ids.begin(), ids.end(), std::int64_t{0});
  FeatureBank bank(ids, y, dim);
  const Mat same(cats, dim, {0.2, 0.5, 0.1, 0.2, 0.5, 0.1, 0.2, 0.5, 0.1, 0.2, 0.5, 0.1, 0.2, 0.5, 0.1});
  for (std::size_t i = 0; i < 8; ++i) bank.set_sample(i, same);
  const auto r = instance_corr(same, bank, 4, RngSeed{0});
  const auto rp = proto_corr(same, build_prototypes(bank, 1, RngSeed{0}));
  for (std::size_t a = 0; a < cats; ++a) {
    for (std::size_t b = 0; b < cats; ++b) {
      const double want = a == b ? 0.0 : 0.25;
      CHECK(r.values(a, b) == doctest::Approx(want).epsilon(1e-14));
      CHECK(rp.values(a, b) == doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("instance and prototype correlations are row stochastic with zero diagonal") {
  Rng rng = make_rng(RngSeed{4});
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t cats = 2 + static_cast<std::size_t>(trial % 5);
    const FeatureBank bank = random_bank(rng, 15, cats, 3);
    const Mat query = random_mat(rng, cats, 3, -1.0, 1.0);
    check_row_stochastic(instance_corr(query, bank, 4, RngSeed{static_cast<std::uint64_t>(trial)}));
    check_row_stochastic(proto_corr(query, build_prototypes(bank, 3, RngSeed{1})));
  }
}

TEST_CASE("instance retrieval is deterministic per seed") {
  Rng rng = make_rng(RngSeed{5});
  const FeatureBank bank = random_bank(rng, 40, 4, 5);
  const Mat query = random_mat(rng, 4, 5, 0.0, 1.0);
  const auto a = instance_corr(query, bank, 3, RngSeed{9});
  const auto b = instance_corr(query, bank, 3, RngSeed{9});
  CHECK(a.values == b.values);
  const auto c = instance_corr(query, bank, 3, RngSeed{10});
  CHECK_FALSE(a.values == c.values);
}

TEST_CASE("instance_corr reports the category without positives") {
  LabelMatrix y(4, 3);
  for (std::size_t i = 0; i < 4; ++i) y.set(i, i % 2, true);
  FeatureBank bank({0, 1, 2, 3}, y, 2);
  for (std::size_t i = 0; i < 4; ++i) bank.set_sample(i, Mat(3, 2, 1.0));
  try {
    (void)instance_corr(Mat(3, 2, 1.0), bank, 2, RngSeed{});
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("category 2") != std::string::npos);
  }
  CHECK_THROWS_AS(build_prototypes(bank, 1, RngSeed{}), DomainError);
}

TEST_CASE("zero-norm features count as zero similarity") {
  const Vec z = {0.0, 0.0}, u = {1.0, 2.0};
  CHECK(similarity_or_zero(z, u) == 0.0);
  CHECK(similarity_or_zero(u, u) == doctest::Approx(1.0));
}

TEST_CASE("prototype examples") {
  // K=1: the category mean.
  Rng rng = make_rng(RngSeed{6});
  const FeatureBank bank = random_bank(rng, 20, 3, 4);
  const auto protos = build_prototypes(bank, 1, RngSeed{0});
  for (std::size_t c = 0; c < 3; ++c) {
    const Mat feats = bank.positive_features(c);
    for (std::size_t d = 0; d < 4; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < feats.rows(); ++i) mean += feats(i, d);
      CHECK(protos.prototypes[c](0, d) == doctest::Approx(mean / static_cast<double>(feats.rows())).epsilon(1e-12));
    }
  }

  // Duplicated single feature.
  LabelMatrix y(3, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    y.set(i, 0, true);
    y.set(i, 1, i == 0);
  }
  FeatureBank dup({0, 1, 2}, y, 2);
  for (std::size_t i = 0; i < 3; ++i) dup.set_sample(i, Mat(2, 2, {0.25, 0.75, 1.0, 2.0}));
  const auto pd = build_prototypes(dup, 1, RngSeed{0});
  CHECK(pd.prototypes[0] == Mat(1, 2, {0.25, 0.75}));

  // Clamping: category 1 has one positive, K=2 is clamped down and recorded.
  const auto clamped = build_prototypes(dup, 2, RngSeed{0});
  CHECK(clamped.prototypes[1].rows() == 1);
  CHECK(clamped.clamped == std::vector<std::size_t>{1});
  CHECK_FALSE(clamped.uniform());
}

TEST_CASE("two-blob category features give the blob means with K=2") {
  LabelMatrix y(6, 2);
  for (std::size_t i = 0; i < 6; ++i) y.set(i, 0, true);
  y.set(0, 1, true);
  FeatureBank bank({0, 1, 2, 3, 4, 5}, y, 2);
  const double pts[6][2] = {{0.0, 0.1}, {0.1, 0.0}, {0.2, 0.2}, {5.0, 5.1}, {5.1, 5.0}, {5.2, 5.2}};
  for (std::size_t i = 0; i < 6; ++i) bank.set_sample(i, Mat(2, 2, {pts[i][0], pts[i][1], 1.0, 1.0}));
  const auto protos = build_prototypes(bank, 2, RngSeed{3});
  Mat p = protos.prototypes[0];
  if (p(0, 0) > p(1, 0)) p = Mat(2, 2, {p(1, 0), p(1, 1), p(0, 0), p(0, 1)});
  CHECK(p(0, 0) == doctest::Approx(0.1));
  CHECK(p(0, 1) == doctest::Approx(0.1));
  CHECK(p(1, 0) == doctest::Approx(5.1));
  CHECK(p(1, 1) == doctest::Approx(5.1));
}

TEST_CASE("hand prototypes giving raw row (1, 0) softmax to (0.7311, 0.2689)") {
  PrototypeBank protos;
  protos.requested_k = 1;
  protos.prototypes = {Mat(1, 2, {0.0, 1.0}), Mat(1, 2, {3.0, 0.0}), Mat(1, 2, {0.0, 2.0})};
  const Mat query(3, 2, {1.0, 0.0, 0.0, 1.0, 1.0, 1.0});
  const auto r = proto_corr(query, protos);
  CHECK(r.kind == CorrelationKind::prototype);
  CHECK(r.values(0, 1) == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  CHECK(r.values(0, 2) == doctest::Approx(0.2689414213699951).epsilon(1e-12));
  check_row_stochastic(r);
}

TEST_CASE("soften hand examples") {
  Mat r4(4, 4, 0.25);
  r4(0, 0) = 0.0;
  r4(0, 1) = 0.7;
  r4(0, 2) = 0.2;
  r4(0, 3) = 0.1;
  const CorrelationMatrix c4{r4, CorrelationKind::instance};
  const std::vector<std::uint8_t> y4 = {1, 0, 0, 0};
  const SoftRow s = soften(y4, c4, 0.05);
  CHECK(s.values[0] == 0.95);
  CHECK(s.values[1] == doctest::Approx(0.035).epsilon(1e-14));
  CHECK(s.values[2] == doctest::Approx(0.010).epsilon(1e-14));
  CHECK(s.values[3] == doctest::Approx(0.005).epsilon(1e-14));
  CHECK(s.overwrite_mass == 0.0);

  const Mat r3(3, 3, {0.0, 0.6, 0.4, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0});
  const std::vector<std::uint8_t> y3 = {1, 1, 0};
  const SoftRow t = soften(y3, CorrelationMatrix{r3, CorrelationKind::prototype}, 0.1);
  CHECK(t.values[0] == 0.9);
  CHECK(t.values[1] == 0.9);
  CHECK(t.values[2] == doctest::Approx(0.09).epsilon(1e-14));
  // mass 0.1*0.6 + 0.1*0.5 was aimed at the positive columns
  CHECK(t.overwrite_mass == doctest::Approx(0.11).epsilon(1e-14));
}

TEST_CASE("soften with alpha 0 returns the hard labels") {
  Rng rng = make_rng(RngSeed{7});
  const auto corr = random_corr(rng, 5);
  const std::vector<std::uint8_t> y = {0, 1, 0, 1, 1};
  const SoftRow s = soften(y, corr, 0.0);
  for (std::size_t c = 0; c < 5; ++c) CHECK(s.values[c] == static_cast<double>(y[c]));
}

TEST_CASE("soften errors") {
  Rng rng = make_rng(RngSeed{8});
  const auto corr = random_corr(rng, 3);
  const std::vector<std::uint8_t> none = {0, 0, 0}, some = {1, 0, 0}, wrong = {1, 0};
  CHECK_THROWS_AS(soften(none, corr, 0.05), DomainError);
  CHECK_THROWS_AS(soften(some, corr, 1.0), DomainError);
  CHECK_THROWS_AS(soften(some, corr, -0.1), DomainError);
  CHECK_THROWS_AS(soften(wrong, corr, 0.05), DomainError);
}

TEST_CASE("soften matches the brute-force oracle and its mass ledger") {
  Rng rng = make_rng(RngSeed{9});
  std::uniform_real_distribution<double> alpha_dist(0.0, 0.5);
  for (std::size_t cats = 2; cats <= 6; ++cats) {
    for (int draw = 0; draw < 50; ++draw) {
      const auto corr = random_corr(rng, cats);
      const LabelMatrix lm = random_labels(rng, 1, cats, 0.4);
      const std::vector<std::uint8_t> y(lm.row(0).begin(), lm.row(0).end());
      const double alpha = alpha_dist(rng);
      const SoftRow s = soften(y, corr, alpha);
      const Vec want = brute_soften(y, corr.values, alpha);
      double neg_sum = 0.0;
      std::size_t m = 0;
      for (std::size_t c = 0; c < cats; ++c) m += y[c];
      for (std::size_t c = 0; c < cats; ++c) {
        CHECK(std::abs(s.values[c] - want[c]) <= 1e-12);
        if (y[c]) {
          CHECK(s.values[c] == 1.0 - alpha);
        } else {
          // each positive row contributes at most alpha, so the cap is alpha * M
          CHECK(s.values[c] >= 0.0);
          CHECK(s.values[c] <= alpha * static_cast<double>(m) + 1e-15);
          if (m == 1) CHECK(s.values[c] <= alpha + 1e-15);
          neg_sum += s.values[c];
        }
      }
      CHECK(std::abs(neg_sum + s.overwrite_mass - alpha * static_cast<double>(m)) <= 1e-9);
    }
  }
}

TEST_CASE("negative soft values follow the correlation ranking") {
  Rng rng = make_rng(RngSeed{10});
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t cats = 6;
    const auto corr = random_corr(rng, cats);
    const std::size_t k = static_cast<std::size_t>(draw) % cats;
    std::vector<std::uint8_t> y(cats, 0);
    y[k] = 1;
    const SoftRow s = soften(y, corr, 0.05);
    std::vector<std::size_t> negs;
    for (std::size_t c = 0; c < cats; ++c) {
      if (c != k) negs.push_back(c);
    }
    auto by_soft = negs, by_corr = negs;
    std::stable_sort(by_soft.begin(), by_soft.end(), [&](auto a, auto b) { return s.values[a] < s.values[b]; });
    std::stable_sort(by_corr.begin(), by_corr.end(),
                     [&](auto a, auto b) { return corr.values(k, a) < corr.values(k, b); });
    CHECK(by_soft == by_corr);
  }
}

TEST_CASE("soften is linear in alpha over negatives") {
  Rng rng = make_rng(RngSeed{11});
  for (int draw = 0; draw < 50; ++draw) {
    const auto corr = random_corr(rng, 5);
    const LabelMatrix lm = random_labels(rng, 1, 5, 0.4);
    const std::vector<std::uint8_t> y(lm.row(0).begin(), lm.row(0).end());
    const double alpha = 0.01 + 0.2 * (draw / 50.0);
    const SoftRow a = soften(y, corr, alpha);
    const SoftRow b = soften(y, corr, 2.0 * alpha);
    for (std::size_t c = 0; c < 5; ++c) {
      if (y[c]) {
        CHECK(b.values[c] == 1.0 - 2.0 * alpha);
      } else {
        CHECK(std::abs(b.values[c] - 2.0 * a.values[c]) <= 1e-15);
      }
    }
  }
}

TEST_CASE("soften_bank covers every sample and uses its own labels") {
  Rng rng = make_rng(RngSeed{12});
  const FeatureBank bank = random_bank(rng, 25, 4, 3);
  const auto protos = build_prototypes(bank, 3, RngSeed{1});
  for (auto kind : {CorrelationKind::instance, CorrelationKind::prototype}) {
    const auto soft = soften_bank(bank, kind, 0.05, 4, &protos, RngSeed{2});
    CHECK(soft.ids == bank.ids());
    CHECK(soft.kind == kind);
    for (std::size_t n = 0; n < bank.size(); ++n) {
      for (std::size_t c = 0; c < 4; ++c) {
        if (bank.labels()(n, c)) CHECK(soft.values(n, c) == 0.95);
        else CHECK((soft.values(n, c) >= 0.0 && soft.values(n, c) <= 0.05 * bank.labels().count_row(n)));
      }
    }
    const auto again = soften_bank(bank, kind, 0.05, 4, &protos, RngSeed{2});
    CHECK(again.values == soft.values);
  }
  CHECK_THROWS(soften_bank(bank, CorrelationKind::prototype, 0.05, 4, nullptr, RngSeed{2}));
}

TEST_CASE("category_correlation is row stochastic") {
  Rng rng = make_rng(RngSeed{13});
  const FeatureBank bank = random_bank(rng, 30, 5, 3);
  const auto protos = build_prototypes(bank, 2, RngSeed{1});
  const Mat m = category_correlation(bank, CorrelationKind::prototype, 4, &protos, RngSeed{0});
  check_row_stochastic(CorrelationMatrix{m, CorrelationKind::prototype});
}

TEST_CASE("feature bank and soft label files round trip") {
  GenConfig cfg = GenConfig::tiny_preset();
  cfg.samples = 12;
  const Dataset ds = generate(cfg);
  Rng rng = make_rng(RngSeed{14});
  FeatureBank bank(ds.ids, ds.labels, 3);
  for (std::size_t i = 0; i < ds.size(); ++i) bank.set_sample(i, random_mat(rng, ds.categories(), 3));
  const auto dir = scratch_dir("correlation_io");
  save_feature_bank(bank, dir / "bank.jsonl");
  CHECK(load_feature_bank(dir / "bank.jsonl", ds) == bank);

  const auto soft = soften_bank(bank, CorrelationKind::instance, 0.05, 2, nullptr, RngSeed{1});
  save_soft_labels(soft, dir / "soft.jsonl");
  const auto back = load_soft_labels(dir / "soft.jsonl");
  CHECK(back.ids == soft.ids);
  CHECK(back.values == soft.values);
  CHECK(back.kind == soft.kind);
  CHECK(back.overwrite_mass == soft.overwrite_mass);

  io::write_text(dir / "bad.jsonl", "{\"id\":0,\"kind\":\"xyz\",\"y_soft\":[0.5]}\n");
  CHECK_THROWS_AS(load_soft_labels(dir / "bad.jsonl"), SchemaError);
}
