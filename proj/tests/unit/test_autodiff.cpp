#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "helpers.hpp"
#include "sfbd/autodiff.hpp"
#include "sfbd/error.hpp"

using namespace sfbd;
using testing::gaussian;

namespace {

// Plain central differences, independent of finite_diff_check.
Tensor numeric_grad(const ScalarFn& f, const Tensor& x, double h) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    Tape t1;
    const double up = f(t1, t1.leaf(probe)).value().item();
    probe[i] = x[i] - h;
    Tape t2;
    const double down = f(t2, t2.leaf(probe)).value().item();
    probe[i] = x[i];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

std::vector<double> eigen_singular_values(const Tensor& a) {
  Eigen::MatrixXd m(a.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) m(r, c) = a.at(r, c);
  Eigen::MatrixXd g = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
  std::vector<double> s;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) s.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i))));
  std::sort(s.rbegin(), s.rend());
  s.resize(std::min(a.rows(), a.cols()));
  return s;
}

}  // namespace

TEST_CASE("matmul values and gradient") {
  Tape t;
  auto i2 = t.constant(Tensor::identity(2));
  auto m = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(i2, m).value() == Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(t.constant(Tensor::matrix({{1, 2}})), t.constant(Tensor::matrix({{3}, {4}}))).value().item() ==
        11.0);

  const Tensor b = Tensor::matrix({{2, 3}, {4, 5}});
  ScalarFn f = [&](Tape& tape, const Var& a) { return ad::sum(ad::matmul(a, tape.constant(b))); };
  Tape t2;
  Var a = t2.leaf(Tensor::identity(2));
  const Tensor analytic = t2.backward(f(t2, a)).of(a);
  CHECK(max_abs_diff(analytic, Tensor::matrix({{5, 9}, {5, 9}})) < 1e-12);
  CHECK(max_abs_diff(numeric_grad(f, Tensor::identity(2), 1e-6), Tensor::matrix({{5, 9}, {5, 9}})) < 1e-6);
}

TEST_CASE("matmul shape error names both shapes") {
  Tape t;
  try {
    ad::matmul(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 3})));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3] * [2x3]") != std::string::npos);
  }
}

TEST_CASE("elementwise ops") {
  Tape t;
  CHECK(ad::relu(t.constant(Tensor::vector({-1, 0, 2}))).value() == Tensor::vector({0, 0, 2}));
  CHECK(ad::exp(t.constant(Tensor::vector({0}))).value().item() == 1.0);
  Var x = t.leaf(Tensor::vector({2.0}));
  CHECK(t.backward(ad::sum(ad::log(x))).of(x).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(ad::log(t.constant(Tensor::vector({0.0}))), NumericError);
  CHECK_THROWS_AS(ad::div(t.constant(Tensor::vector({1.0})), t.constant(Tensor::vector({0.0}))), NumericError);
  CHECK_THROWS_AS(ad::add(t.constant(Tensor({2})), t.constant(Tensor({3}))), ShapeError);
  CHECK_THROWS_AS(ad::exp(t.constant(Tensor::vector({1000.0}))), NumericError);
  CHECK_THROWS_AS(t.leaf(Tensor::vector({std::nan("")})), NumericError);
}

TEST_CASE("softmax_rows") {
  Tape t;
  auto p = ad::softmax_rows(t.constant(Tensor::matrix({{0, 0}})), 1.0).value();
  CHECK(p[0] == doctest::Approx(0.5));
  p = ad::softmax_rows(t.constant(Tensor::matrix({{1, 0}})), 1.0).value();
  const double e = std::exp(1.0);
  CHECK(std::abs(p[0] - e / (e + 1)) < 1e-15);
  CHECK(std::abs(p[0] - 0.73106) < 1e-5);
  CHECK(std::abs(p[1] - 0.26894) < 1e-5);
  p = ad::softmax_rows(t.constant(Tensor::matrix({{1, 0}})), 1000.0).value();
  CHECK(std::abs(p[0] - 0.5) < 1e-3);
  CHECK_THROWS_AS(ad::softmax_rows(t.constant(Tensor::matrix({{1, 0}})), 0.0), ConfigError);
  CHECK_THROWS_AS(ad::softmax_rows(t.constant(Tensor::matrix({{1, 0}})), -1.0), ConfigError);
}

TEST_CASE("softmax rows sum to one with entries in (0,1)") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tape t;
    const Tensor x = gaussian({5, 7}, rng, 3.0);
    const Tensor p = ad::softmax_rows(t.constant(x), 0.5 + trial * 0.1).value();
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (double v : p.row(r)) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("row_l2_normalize") {
  Tape t;
  auto y = ad::row_l2_normalize(t.constant(Tensor::matrix({{3, 4}}))).value();
  CHECK(max_abs_diff(y, Tensor::matrix({{0.6, 0.8}})) < 1e-15);
  try {
    ad::row_l2_normalize(t.constant(Tensor::matrix({{1, 0}, {0, 0}})));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  Rng rng(3);
  const Tensor x = gaussian({3, 4}, rng);
  const Tensor once = ad::row_l2_normalize(t.constant(x)).value();
  const Tensor twice = ad::row_l2_normalize(t.constant(once)).value();
  CHECK(max_abs_diff(once, twice) < 1e-12);
  const Tensor w = gaussian({3, 4}, rng);
  CHECK(finite_diff_check([&](Tape& tp, const Var& v) { return ad::sum(ad::mul(ad::row_l2_normalize(v), tp.constant(w))); },
                          x) < 1e-6);
}

TEST_CASE("concat_cols") {
  Tape t;
  CHECK(ad::concat_cols(t.constant(Tensor::matrix({{1}})), t.constant(Tensor::matrix({{2}}))).value() ==
        Tensor::matrix({{1, 2}}));
  CHECK(ad::concat_cols(t.constant(Tensor({2, 3})), t.constant(Tensor({2, 5}))).shape() == Shape{2, 8});
  CHECK_THROWS_AS(ad::concat_cols(t.constant(Tensor({2, 3})), t.constant(Tensor({3, 3}))), ShapeError);
  Rng rng(4);
  const Tensor a = gaussian({3, 2}, rng), b = gaussian({3, 4}, rng), w = gaussian({3, 6}, rng);
  CHECK(finite_diff_check([&](Tape& tp, const Var& v) {
          return ad::sum(ad::mul(ad::concat_cols(v, tp.constant(b)), tp.constant(w)));
        }, a) < 1e-8);
  CHECK(finite_diff_check([&](Tape& tp, const Var& v) {
          return ad::sum(ad::mul(ad::concat_cols(tp.constant(a), v), tp.constant(w)));
        }, b) < 1e-8);
}

TEST_CASE("svd_spectrum examples") {
  Tape t;
  auto s = ad::svd_spectrum(t.constant(Tensor::identity(3))).value();
  CHECK(max_abs_diff(s, Tensor::vector({1, 1, 1})) < 1e-14);
  s = ad::svd_spectrum(t.constant(Tensor::matrix({{3, 0}, {0, 2}}))).value();
  CHECK(max_abs_diff(s, Tensor::vector({3, 2})) < 1e-14);
  s = ad::svd_spectrum(t.constant(Tensor::matrix({{1, 1}, {0, 1}}))).value();
  CHECK(std::abs(s[0] - std::sqrt((3 + std::sqrt(5.0)) / 2)) < 1e-12);
  CHECK(std::abs(s[1] - std::sqrt((3 - std::sqrt(5.0)) / 2)) < 1e-12);
  CHECK(std::abs(s[0] - 1.61803) < 1e-5);
  CHECK(std::abs(s[1] - 0.61803) < 1e-5);
}

TEST_CASE("jacobi svd reconstructs and matches eigenvalue oracle") {
  Rng rng(5);
  for (auto [m, n] : std::vector<std::pair<std::size_t, std::size_t>>{{4, 6}, {6, 4}, {1, 5}, {8, 12}, {7, 7}}) {
    const Tensor a = gaussian({m, n}, rng);
    const Svd svd = jacobi_svd(a);
    CHECK(max_abs_diff(reconstruct(svd), a) <= 1e-8 * (1 + frobenius_norm(a)));
    const auto oracle = eigen_singular_values(a);
    REQUIRE(svd.s.size() == oracle.size());
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(std::abs(svd.s[i] - oracle[i]) < 1e-8);
    for (std::size_t i = 1; i < svd.s.size(); ++i) CHECK(svd.s[i - 1] >= svd.s[i]);
  }
}

TEST_CASE("svd non-convergence reports sweep count") {
  Rng rng(6);
  const Tensor a = gaussian({8, 8}, rng);
  try {
    jacobi_svd(a, SvdOptions{1, 1e-12});
    FAIL("expected SvdConvergenceError");
  } catch (const SvdConvergenceError& e) {
    CHECK(e.sweeps() == 1);
  }
}

TEST_CASE("svd_spectrum gradient") {
  Rng rng(7);
  const Tensor a = gaussian({4, 6}, rng);
  const Tensor w = Tensor::vector({1.0, -0.5, 2.0, 0.3});
  CHECK(finite_diff_check([&](Tape& tp, const Var& v) { return ad::sum(ad::mul(ad::svd_spectrum(v), tp.constant(w))); },
                          a) < 1e-4);
}

TEST_CASE("svd_spectrum transpose and scale invariance") {
  Rng rng(8);
  std::uniform_int_distribution<std::size_t> dim(1, 8);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor a = gaussian({dim(rng), dim(rng)}, rng);
    Tape t;
    const Tensor s = ad::svd_spectrum(t.constant(a)).value();
    const Tensor st = ad::svd_spectrum(t.constant(a.transposed())).value();
    CHECK(max_abs_diff(s, st) < 1e-10);
    const double c = -2.5;
    Tensor ca = a;
    for (auto& v : ca.data()) v *= c;
    const Tensor sc = ad::svd_spectrum(t.constant(ca)).value();
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(std::abs(sc[i] - std::abs(c) * s[i]) < 1e-10);
  }
}

TEST_CASE("backward basics") {
  Tape t;
  Var x = t.leaf(Tensor::matrix({{1, -2, 3}, {4, 5, -6}}));
  CHECK(t.backward(ad::sum(x)).of(x) == Tensor({2, 3}, 1.0));
  Var half_sq = ad::scale(ad::sum(ad::mul(x, x)), 0.5);
  CHECK(max_abs_diff(t.backward(half_sq).of(x), x.value()) < 1e-15);
  CHECK_THROWS_AS(t.backward(x), ShapeError);

  Var unused = t.leaf(Tensor::vector({1, 2}));
  const GradMap g = t.backward(ad::sum(x));
  CHECK_FALSE(g.contains(unused));
  CHECK(g.of(unused) == Tensor({2}, 0.0));
}

TEST_CASE("backward replay is deterministic") {
  Rng rng(9);
  Tape t;
  Var x = t.leaf(gaussian({4, 5}, rng));
  Var w = t.leaf(gaussian({5, 3}, rng));
  Var loss = ad::sum(ad::svd_spectrum(ad::row_l2_normalize(ad::matmul(x, w))));
  CHECK(t.backward(loss) == t.backward(loss));
}

TEST_CASE("finite_diff_check examples") {
  ScalarFn sq = [](Tape&, const Var& v) { return ad::sum(ad::mul(v, v)); };
  CHECK(finite_diff_check(sq, Tensor::vector({1, 2}), 1e-5) < 1e-8);
  ScalarFn constant = [](Tape& t, const Var&) { return t.constant(Tensor::scalar(3.0)); };
  CHECK(finite_diff_check(constant, Tensor::vector({1, 2}), 1e-5) == 0.0);
}

TEST_CASE("every differentiable op passes finite differences") {
  Rng rng(10);
  const Tensor x = gaussian({3, 4}, rng);
  const Tensor pos = [&] {
    Tensor p = x;
    for (auto& v : p.data()) v = std::abs(v) + 0.5;
    return p;
  }();
  const Tensor w = gaussian({3, 4}, rng);
  const Tensor m = gaussian({4, 2}, rng);
  const Tensor row = gaussian({4}, rng);
  const Tensor gamma = gaussian({4}, rng), beta = gaussian({4}, rng);
  auto weighted = [&](Tape& t, const Var& v) { return ad::sum(ad::mul(v, t.constant(w))); };
  const std::vector<std::pair<std::string, std::pair<ScalarFn, Tensor>>> cases = {
      {"matmul", {[&](Tape& t, const Var& v) { return ad::sum(ad::matmul(v, t.constant(m))); }, x}},
      {"transpose", {[&](Tape& t, const Var& v) { return weighted(t, ad::transpose(ad::transpose(v))); }, x}},
      {"reshape", {[&](Tape& t, const Var& v) { return weighted(t, ad::reshape(ad::reshape(v, {12}), {3, 4})); }, x}},
      {"add", {[&](Tape& t, const Var& v) { return weighted(t, ad::add(v, ad::mul(v, v))); }, x}},
      {"sub", {[&](Tape& t, const Var& v) { return weighted(t, ad::sub(ad::mul(v, v), v)); }, x}},
      {"div", {[&](Tape& t, const Var& v) { return weighted(t, ad::div(t.constant(w), v)); }, pos}},
      {"add_scalar", {[&](Tape& t, const Var& v) { return weighted(t, ad::add_scalar(ad::mul(v, v), 2.0)); }, x}},
      {"exp", {[&](Tape& t, const Var& v) { return weighted(t, ad::exp(v)); }, x}},
      {"log", {[&](Tape& t, const Var& v) { return weighted(t, ad::log(v)); }, pos}},
      {"abs", {[&](Tape& t, const Var& v) { return weighted(t, ad::abs(v)); }, pos}},
      {"relu", {[&](Tape& t, const Var& v) { return weighted(t, ad::relu(v)); }, pos}},
      {"gelu", {[&](Tape& t, const Var& v) { return weighted(t, ad::gelu(v)); }, x}},
      {"mean", {[&](Tape&, const Var& v) { return ad::mean(ad::mul(v, v)); }, x}},
      {"softmax_rows", {[&](Tape& t, const Var& v) { return weighted(t, ad::softmax_rows(v, 0.7)); }, x}},
      {"log_softmax_rows", {[&](Tape& t, const Var& v) { return weighted(t, ad::log_softmax_rows(v, 0.7)); }, x}},
      {"col_l2_normalize", {[&](Tape& t, const Var& v) { return weighted(t, ad::col_l2_normalize(v)); }, x}},
      {"scale_cols", {[&](Tape& t, const Var& v) { return weighted(t, ad::scale_cols(t.constant(x), v)); }, row.reshaped({1, 4})}},
      {"add_row_vector", {[&](Tape& t, const Var& v) { return weighted(t, ad::mul(ad::add_row_vector(t.constant(x), v), ad::add_row_vector(t.constant(x), v))); }, row}},
      {"layer_norm_rows", {[&](Tape& t, const Var& v) {
         return weighted(t, ad::layer_norm_rows(v, t.constant(gamma), t.constant(beta)));
       }, x}},
      {"layer_norm_gamma", {[&](Tape& t, const Var& v) {
         return weighted(t, ad::layer_norm_rows(t.constant(x), v, t.constant(beta)));
       }, gamma}},
  };
  for (const auto& [name, c] : cases) {
    CAPTURE(name);
    CHECK(finite_diff_check(c.first, c.second) < 1e-4);
  }
}
