#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sfbd/adapters.hpp"
#include "sfbd/error.hpp"
#include "sfbd/model.hpp"

using namespace sfbd;
using testing::gaussian;

namespace {

Tensor forward_head(const Head& head, const Tensor& x) {
  Tape t;
  ParamBinder binder(t, false);
  return head_forward(binder, head, t.constant(x)).value();
}

double column_norm(const Tensor& w, std::size_t j) {
  double s = 0.0;
  for (std::size_t r = 0; r < w.rows(); ++r) s += w.at(r, j) * w.at(r, j);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("adapters start equal to their base") {
  Rng rng(1);
  const LinearLayer base = LinearLayer::init(7, 5, rng);
  const Head lora = wrap_head(base, {PeftKind::lora, 3}, rng);
  const Head dora = wrap_head(base, {PeftKind::dora, 3}, rng);
  for (int i = 0; i < 5; ++i) {
    const Tensor x = gaussian({4, 7}, rng);
    const Tensor want = linear_forward(base, x);
    CHECK(max_abs_diff(forward_head(lora, x), want) < 1e-12);
    CHECK(max_abs_diff(forward_head(dora, x), want) < 1e-12);
  }
  CHECK(max_abs_diff(effective_weight(std::get<DoraLinear>(dora)), base.weight) < 1e-12);
  CHECK(std::get<LoraLinear>(lora).b == Tensor({5, 3}, 0.0));
  CHECK_FALSE(std::get<DoraLinear>(dora).base.trainable);
  for (double m : std::get<DoraLinear>(dora).magnitude.data()) CHECK(m > 0.0);
}

TEST_CASE("dora effective weight examples") {
  Rng rng(2);
  LinearLayer base{Tensor::identity(2), Tensor({2}, 0.0), true};
  DoraLinear d = DoraLinear::wrap(base, 1, rng);
  CHECK(d.magnitude.shape() == Shape{1, 2});
  d.magnitude = Tensor::matrix({{2, 3}});
  CHECK(max_abs_diff(effective_weight(d), Tensor::matrix({{2, 0}, {0, 3}})) < 1e-15);

  // B A cancels column 0 of W0 exactly.
  d.a = Tensor::matrix({{1, 0}});
  d.b = Tensor::matrix({{-1}, {0}});
  try {
    effective_weight(d);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("column 0") != std::string::npos);
  }
}

TEST_CASE("dora column norms equal the magnitude vector") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    DoraLinear d = DoraLinear::wrap(LinearLayer::init(6, 4, rng), 2, rng);
    d.b = gaussian({4, 2}, rng);
    d.magnitude = gaussian({1, 6}, rng);
    for (auto& m : d.magnitude.data()) m = std::abs(m) + 0.1;
    const Tensor w = effective_weight(d);
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(column_norm(w, j) - d.magnitude[j]) < 1e-10);
  }
}

TEST_CASE("lora effective weight") {
  Rng rng(4);
  LinearLayer base{Tensor::matrix({{1, 2}, {3, 4}}), Tensor({2}, 0.0), true};
  LoraLinear l = LoraLinear::wrap(base, 1, rng);
  CHECK(effective_weight(l) == base.weight);
  CHECK(l.scaling() == 1.0);
  l.b = Tensor::matrix({{1}, {0}});
  l.a = Tensor::matrix({{0, 2}});
  CHECK(effective_weight(l) == Tensor::matrix({{1, 4}, {3, 4}}));

  l.b = gaussian({2, 1}, rng);
  const Tensor w = gaussian({2, 2}, rng);
  for (Tensor LoraLinear::*field : {&LoraLinear::a, &LoraLinear::b}) {
    CHECK(finite_diff_check([&](Tape& t, const Var& x) {
            ParamBinder binder(t);
            binder.alias(l.*field, x);
            return ad::sum(ad::mul(lora_effective_weight(binder, l), t.constant(w)));
          }, l.*field) < 1e-4);
  }
}

TEST_CASE("base weight receives no gradient through adapters") {
  Rng rng(5);
  DoraLinear d = DoraLinear::wrap(LinearLayer::init(4, 3, rng), 2, rng);
  Tape t;
  ParamBinder binder(t);
  Var y = adapter_forward(binder, d, t.constant(gaussian({2, 4}, rng)));
  const GradMap g = t.backward(ad::sum(ad::mul(y, y)));
  CHECK_FALSE(g.contains(*binder.find(d.base.weight)));
  CHECK_FALSE(g.contains(*binder.find(d.base.bias)));
  CHECK(g.contains(*binder.find(d.magnitude)));
}

TEST_CASE("merge matches the wrapped layer") {
  Rng rng(6);
  for (PeftKind kind : {PeftKind::lora, PeftKind::dora}) {
    Head h = wrap_head(LinearLayer::init(9, 5, rng), {kind, 4}, rng);
    std::visit([&](auto& layer) {
      if constexpr (!std::is_same_v<std::decay_t<decltype(layer)>, LinearLayer>) {
        layer.b = gaussian(layer.b.shape(), rng, 0.5);
      }
    }, h);
    const LinearLayer merged = merge(h);
    for (int batch = 0; batch < 10; ++batch) {
      const Tensor x = gaussian({6, 9}, rng);
      CHECK(max_abs_diff(linear_forward(merged, x), forward_head(h, x)) < 1e-12);
    }
    const LinearLayer twice = merge(merged);
    CHECK(twice.weight == merged.weight);
    CHECK(twice.bias == merged.bias);
  }
}

TEST_CASE("adapter parameter arithmetic") {
  for (std::size_t r : {1, 4, 8}) {
    const std::size_t lora = adapter_param_count(10, 7, {PeftKind::lora, r});
    const std::size_t dora = adapter_param_count(10, 7, {PeftKind::dora, r});
    CHECK(lora == r * 17);
    CHECK(dora == r * 17 + 10);
  }
  CHECK(adapter_param_count(10, 7, {PeftKind::none, 8}) == 0);
  Rng rng(7);
  const DoraLinear d = DoraLinear::wrap(LinearLayer::init(10, 7, rng), 3, rng);
  CHECK(d.a.size() + d.b.size() + d.magnitude.size() == adapter_param_count(10, 7, {PeftKind::dora, 3}));
}

TEST_CASE("peft kind parsing") {
  CHECK(parse_peft_kind("dora") == PeftKind::dora);
  CHECK(to_string(PeftKind::lora) == "lora");
  CHECK_THROWS_AS(parse_peft_kind("qlora"), ConfigError);
  Rng rng(8);
  CHECK_THROWS_AS(LoraLinear::wrap(LinearLayer::init(3, 3, rng), 0, rng), ConfigError);
}
