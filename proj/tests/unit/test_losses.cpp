#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "sfbd/error.hpp"
#include "sfbd/losses.hpp"

using namespace sfbd;
using testing::gaussian;
using testing::unit_rows;

namespace {

MmdConfig fixed(double sigma) {
  MmdConfig c;
  c.median_heuristic = false;
  c.bandwidths = {sigma};
  return c;
}

double loss_of(const std::function<Var(Tape&)>& f) {
  Tape t;
  return f(t).value().item();
}

// Sum of row entropies of softmax(t t^T / tau), computed directly.
double teacher_entropy(const Tensor& t, double tau) {
  double h = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i) {
    std::vector<double> z(t.rows());
    for (std::size_t j = 0; j < t.rows(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < t.cols(); ++k) d += t.at(i, k) * t.at(j, k);
      z[j] = d / tau;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) s += std::exp(v - mx);
    for (double v : z) {
      const double p = std::exp(v - mx) / s;
      h -= p * std::log(p);
    }
  }
  return h;
}

double brute_force_wd(std::vector<double> a, const std::vector<double>& b) {
  std::sort(a.begin(), a.end());
  double best = 1e300;
  do {
    double c = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) c += std::abs(a[i] - b[i]);
    best = std::min(best, c / static_cast<double>(a.size()));
  } while (std::next_permutation(a.begin(), a.end()));
  return best;
}

double wd(const Tensor& a, const Tensor& b) {
  Tape t;
  return wd_spectrum_loss(t.constant(a), t.constant(b)).value().item();
}

}  // namespace

TEST_CASE("softclip examples") {
  SoftClipConfig c1{1.0, false};
  CHECK(loss_of([&](Tape& t) { return softclip_loss(t.constant(Tensor::matrix({{0.6, 0.8}})),
                                                    t.constant(Tensor::matrix({{1, 0}})), c1); }) == 0.0);
  const double e = std::exp(1.0);
  const double p = e / (e + 1), q = 1 / (e + 1);
  const double oracle = 2 * -(p * std::log(p) + q * std::log(q));
  const double got = loss_of([&](Tape& t) {
    return softclip_loss(t.constant(Tensor::identity(2)), t.constant(Tensor::identity(2)), c1);
  });
  CHECK(std::abs(got - oracle) < 1e-12);
  CHECK(std::abs(got - 1.1644062) < 1e-6);
}

TEST_CASE("softclip equals teacher entropy at pred == target and bounds it below") {
  Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor tgt = unit_rows({6, 5}, rng);
    const SoftClipConfig cfg;
    const double h = teacher_entropy(tgt, cfg.temperature);
    CHECK(std::abs(loss_of([&](Tape& t) { return softclip_loss(t.constant(tgt), t.constant(tgt), cfg); }) - h) < 1e-10);
    const Tensor pred = unit_rows({6, 5}, rng);
    CHECK(loss_of([&](Tape& t) { return softclip_loss(t.constant(pred), t.constant(tgt), cfg); }) >= h - 1e-10);
  }
}

TEST_CASE("softclip preconditions") {
  Tape t;
  CHECK_THROWS_AS(softclip_loss(t.constant(Tensor::matrix({{1, 1}})), t.constant(Tensor::matrix({{1, 0}})), {}),
                  PreconditionError);
  CHECK_THROWS_AS(softclip_loss(t.constant(Tensor::matrix({{1, 0}})), t.constant(Tensor::matrix({{1, 0}})), {0.0, false}),
                  ConfigError);
}

TEST_CASE("softclip teacher is detached") {
  Rng rng(2);
  Tape t;
  Var pred = t.leaf(unit_rows({4, 3}, rng));
  Var tgt = t.leaf(unit_rows({4, 3}, rng));
  const GradMap g = t.backward(softclip_loss(pred, tgt, {}));
  CHECK(g.contains(pred));
  // target still feeds the student logits, so its gradient exists; it must
  // equal the gradient with the teacher frozen as a constant.
  Tape t2;
  Var p2 = t2.leaf(pred.value());
  Var tg2 = t2.leaf(tgt.value());
  Var teacher = t2.constant(ad::softmax_rows(t2.constant(matmul_nt_values(tgt.value(), tgt.value())), 0.125).value());
  Var logq = ad::log_softmax_rows(ad::matmul(p2, ad::transpose(tg2)), 0.125);
  const GradMap g2 = t2.backward(ad::scale(ad::sum(ad::mul(teacher, logq)), -1.0));
  CHECK(max_abs_diff(g.of(tgt), g2.of(tg2)) < 1e-12);
}

TEST_CASE("mmd examples") {
  Rng rng(3);
  const Tensor x = gaussian({5, 3}, rng);
  CHECK(mmd_value(x, x, {}) < 1e-12);
  const double oracle = 2.0 - 2.0 * std::exp(-0.5);
  CHECK(std::abs(mmd_value(Tensor::matrix({{0}}), Tensor::matrix({{1}}), fixed(1.0)) - oracle) < 1e-15);
  CHECK(std::abs(oracle - 0.78694) < 1e-5);
  CHECK_THROWS_AS(mmd_value(Tensor({2, 3}), Tensor({2, 4}), {}), ShapeError);
}

TEST_CASE("mmd is nonnegative and symmetric") {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor x = gaussian({5, 3}, rng), y = gaussian({4, 3}, rng);
    const double a = mmd_value(x, y, {}), b = mmd_value(y, x, {});
    CHECK(a >= 0.0);
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("mmd median heuristic") {
  const Tensor x = Tensor::matrix({{0, 0}, {3, 4}});
  const Tensor y = Tensor::matrix({{0, 0}});
  // pooled distances {5, 0, 5}: median 5
  CHECK(median_pairwise_distance(x, y) == 5.0);
  CHECK(resolve_bandwidths(x, y, MmdConfig{true, {0.5, 2.0}}) == std::vector<double>{2.5, 10.0});
  const Tensor same = Tensor::matrix({{1, 1}, {1, 1}});
  CHECK(median_pairwise_distance(same, same) == 1.0);
  CHECK_THROWS_AS(resolve_bandwidths(x, y, MmdConfig{false, {}}), ConfigError);
  CHECK_THROWS_AS(resolve_bandwidths(x, y, MmdConfig{false, {-1.0}}), ConfigError);
}

TEST_CASE("mmd gradient in both arguments") {
  Rng rng(5);
  const Tensor x = gaussian({5, 3}, rng), y = gaussian({4, 3}, rng);
  const MmdConfig c = fixed(1.3);
  CHECK(finite_diff_check([&](Tape& t, const Var& v) { return mmd_loss(v, t.constant(y), c); }, x) < 1e-6);
  CHECK(finite_diff_check([&](Tape& t, const Var& v) { return mmd_loss(t.constant(x), v, c); }, y) < 1e-6);
  const MmdConfig multi{false, {0.5, 1.0, 2.0}};
  CHECK(finite_diff_check([&](Tape& t, const Var& v) { return mmd_loss(v, t.constant(y), multi); }, x) < 1e-6);
}

TEST_CASE("unified spectrum") {
  Rng rng(6);
  // Orthonormal rows split across the two blocks.
  const Tensor img = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  const Tensor txt = Tensor::matrix({{0, 1}, {1, 0}, {std::sqrt(0.5), std::sqrt(0.5)}});
  Tape t;
  // txt rows are unit but not mutually orthogonal, so use an orthonormal pair.
  const Tensor txt2 = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}});
  const Tensor s = unified_spectrum(t.constant(img), t.constant(txt2)).value();
  REQUIRE(s.size() == 3);
  for (double v : s.data()) CHECK(std::abs(v - 1.0 / std::sqrt(3.0)) < 1e-12);
  CHECK(unified_spectrum(t.constant(txt.rows_slice(0, 1)), t.constant(img.rows_slice(0, 1))).value() ==
        Tensor::vector({1.0}));
  CHECK_THROWS_AS(unified_spectrum(t.constant(img), t.constant(txt.rows_slice(0, 2))), ShapeError);
  CHECK_THROWS_AS(unified_spectrum(t.constant(Tensor::matrix({{2, 0}})), t.constant(Tensor::matrix({{1}}))),
                  PreconditionError);

  const Tensor a = unit_rows({5, 4}, rng), b = unit_rows({5, 3}, rng);
  const Tensor base = unified_spectrum(t.constant(a), t.constant(b)).value();
  CHECK(base.size() == 5);
  double norm = 0.0;
  for (double v : base.data()) norm += v * v;
  CHECK(std::abs(norm - 1.0) < 1e-12);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  const Tensor permuted = unified_spectrum(t.constant(a.gather_rows(perm)), t.constant(b.gather_rows(perm))).value();
  CHECK(max_abs_diff(base, permuted) < 1e-12);

  const Tensor sum_norm = unified_spectrum(t.constant(a), t.constant(b), SpectrumNorm::sum).value();
  CHECK(std::abs(std::accumulate(sum_norm.data().begin(), sum_norm.data().end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("spectrum normalization is scale invariant and idempotent") {
  Rng rng(7);
  const Tensor m = gaussian({5, 7}, rng);
  Tape t;
  Var s = ad::svd_spectrum(t.constant(m));
  const Tensor n1 = ad::row_l2_normalize(ad::reshape(s, {1, 5})).value();
  const Tensor n2 = ad::row_l2_normalize(t.constant(n1)).value();
  CHECK(max_abs_diff(n1, n2) < 1e-12);
  Tensor scaled = m;
  for (auto& v : scaled.data()) v *= 3.7;
  const Tensor n3 = ad::row_l2_normalize(ad::reshape(ad::svd_spectrum(t.constant(scaled)), {1, 5})).value();
  CHECK(max_abs_diff(n1, n3) < 1e-10);
}

TEST_CASE("wd spectrum examples") {
  CHECK(wd(Tensor::vector({3, 2, 1}), Tensor::vector({3, 2, 1})) == 0.0);
  CHECK(std::abs(wd(Tensor::vector({3, 2, 1}), Tensor::vector({4, 3, 2})) - 1.0) < 1e-15);
  CHECK(std::abs(wd(Tensor::vector({3, 0, 0}), Tensor::vector({1, 1, 1})) - 4.0 / 3.0) < 1e-15);
  CHECK(std::abs(brute_force_wd({1, 2, 3}, {2, 3, 4}) - 1.0) < 1e-15);
  CHECK(std::abs(brute_force_wd({3, 0, 0}, {1, 1, 1}) - 4.0 / 3.0) < 1e-15);
  CHECK_THROWS_AS(wd(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})), ShapeError);
}

TEST_CASE("wd matches enumeration and is a metric") {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 1 + trial % 6;
    Tensor a({k}), b({k}), c({k});
    for (std::size_t i = 0; i < k; ++i) {
      a[i] = u(rng);
      b[i] = u(rng);
      c[i] = u(rng);
    }
    auto sorted_desc = [](Tensor t) {
      std::sort(t.data().begin(), t.data().end(), std::greater<>());
      return t;
    };
    a = sorted_desc(a);
    b = sorted_desc(b);
    c = sorted_desc(c);
    const std::vector<double> av(a.data().begin(), a.data().end()), bv(b.data().begin(), b.data().end());
    CHECK(std::abs(wd(a, b) - brute_force_wd(av, bv)) < 1e-12);
    CHECK(wd(a, b) >= 0.0);
    CHECK(std::abs(wd(a, b) - wd(b, a)) < 1e-12);
    CHECK(wd(a, c) <= wd(a, b) + wd(b, c) + 1e-12);
  }
}

TEST_CASE("image/text losses bookkeeping") {
  Rng rng(9);
  const Tensor ci = unit_rows({6, 8}, rng), ct = unit_rows({6, 5}, rng);
  AlignConfig cfg;
  Tape t;
  LossTerms same = image_text_losses(t.constant(ci), t.constant(ci), t.constant(ct), t.constant(ct), cfg);
  CHECK(same.report.l_mmd_image < 1e-12);
  CHECK(same.report.l_mmd_text < 1e-12);
  CHECK(std::abs(same.report.l_softclip_image - teacher_entropy(ci, cfg.softclip.temperature)) < 1e-10);
  CHECK(std::abs(same.report.l_softclip_text - teacher_entropy(ct, cfg.softclip.temperature)) < 1e-10);

  const Tensor pi = unit_rows({6, 8}, rng), pt = unit_rows({6, 5}, rng);
  for (Phase phase : {Phase::source, Phase::adaptation}) {
    LossTerms l = phase_losses(phase, t.constant(pi), t.constant(ci), t.constant(pt), t.constant(ct), cfg);
    const LossReport& r = l.report;
    CHECK(std::abs(r.l_image - (r.l_softclip_image + r.l_mmd_image)) < 1e-10);
    CHECK(std::abs(r.l_text - (r.l_softclip_text + r.l_mmd_text)) < 1e-10);
    const double want = phase == Phase::source ? source_loss(r) : adaptation_loss(r);
    CHECK(std::abs(r.total - want) < 1e-10);
    CHECK(r.l_wd.has_value() == (phase == Phase::adaptation));
  }
}

TEST_CASE("duplicating a batch leaves mmd unchanged at fixed bandwidth") {
  Rng rng(10);
  const Tensor x = unit_rows({5, 4}, rng), y = unit_rows({5, 4}, rng);
  std::vector<std::size_t> twice{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  const MmdConfig c = fixed(0.8);
  CHECK(std::abs(mmd_value(x, y, c) - mmd_value(x.gather_rows(twice), y.gather_rows(twice), c)) < 1e-12);
}

TEST_CASE("phase loss sums") {
  LossReport r;
  r.l_image = 1.0;
  r.l_text = 2.0;
  CHECK(source_loss(r) == 3.0);
  CHECK_THROWS_AS(adaptation_loss(r), ConfigError);
  r.l_wd = 0.5;
  CHECK(adaptation_loss(r) == 3.5);
  CHECK(source_loss(r) == 3.0);
}

TEST_CASE("adaptation objective gradient on a toy instance") {
  Rng rng(11);
  const Tensor ci = unit_rows({4, 6}, rng), ct = unit_rows({4, 6}, rng), pt = unit_rows({4, 6}, rng);
  const Tensor raw = gaussian({4, 6}, rng);
  AlignConfig cfg;
  cfg.mmd = fixed(1.0);
  CHECK(finite_diff_check([&](Tape& t, const Var& v) {
          return phase_losses(Phase::adaptation, ad::row_l2_normalize(v), t.constant(ci), t.constant(pt),
                              t.constant(ct), cfg)
              .total;
        }, raw) < 1e-4);
}
