#include "sfbd/gradcheck.hpp"

#include <cmath>
#include <random>

#include "sfbd/adapters.hpp"
#include "sfbd/error.hpp"
#include "sfbd/losses.hpp"
#include "sfbd/model.hpp"

namespace sfbd {

namespace {

Tensor gaussian(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : t.data()) v = n(rng);
  return t;
}

Tensor unit_rows(Shape shape, Rng& rng) {
  Tensor t = gaussian(std::move(shape), rng);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    double n = 0.0;
    for (double v : t.row(r)) n += v * v;
    n = std::sqrt(n);
    for (double& v : t.row(r)) v /= n;
  }
  return t;
}

AlignConfig fixed_bandwidth() {
  AlignConfig cfg;
  cfg.mmd.median_heuristic = false;
  cfg.mmd.bandwidths = {1.0};
  return cfg;
}

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](std::string name, const ScalarFn& f, const Tensor& x) {
    out.push_back({std::move(name), x.size(), finite_diff_check(f, x, kGradCheckStep)});
  };
  const AlignConfig align = fixed_bandwidth();

  {
    const Tensor raw = gaussian({4, 6}, rng);
    const Tensor target = unit_rows({4, 6}, rng);
    check("softclip", [&](Tape& t, const Var& x) {
      return softclip_loss(ad::row_l2_normalize(x), t.constant(target), align.softclip);
    }, raw);
  }
  {
    const Tensor x0 = gaussian({5, 3}, rng);
    const Tensor y = gaussian({4, 3}, rng);
    MmdConfig mmd;
    mmd.median_heuristic = false;
    mmd.bandwidths = resolve_bandwidths(x0, y, MmdConfig{});
    check("mmd", [&](Tape& t, const Var& x) { return mmd_loss(x, t.constant(y), mmd); }, x0);
  }
  {
    // Distinct, well separated entries keep the sorted matching locally fixed.
    Tensor pred({6}), target({6});
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    for (std::size_t i = 0; i < 6; ++i) {
      pred[i] = 1.0 * static_cast<double>(i) + jitter(rng);
      target[i] = 1.0 * static_cast<double>(i) + 0.5 + jitter(rng);
    }
    check("wd_spectrum", [&](Tape& t, const Var& x) { return wd_spectrum_loss(x, t.constant(target)); }, pred);
  }
  {
    const Tensor img = gaussian({4, 5}, rng);
    const Tensor txt = unit_rows({4, 3}, rng);
    const Tensor weights = gaussian({4}, rng);
    check("unified_spectrum", [&](Tape& t, const Var& x) {
      Var s = unified_spectrum(ad::row_l2_normalize(x), t.constant(txt));
      return ad::sum(ad::mul(s, t.constant(weights)));
    }, img);
  }
  {
    LinearLayer base = LinearLayer::init(3, 3, rng);
    DoraLinear dora = DoraLinear::wrap(base, 2, rng);
    dora.b = gaussian({3, 2}, rng);
    for (auto& v : dora.b.data()) v *= 0.3;
    const Tensor weights = gaussian({3, 3}, rng);
    auto via = [&](Tensor DoraLinear::*field) {
      return [&, field](Tape& t, const Var& x) {
        ParamBinder binder(t);
        binder.alias(dora.*field, x);
        return ad::sum(ad::mul(dora_effective_weight(binder, dora), t.constant(weights)));
      };
    };
    check("dora_effective_weight.m", via(&DoraLinear::magnitude), dora.magnitude);
    check("dora_effective_weight.a", via(&DoraLinear::a), dora.a);
    check("dora_effective_weight.b", via(&DoraLinear::b), dora.b);
  }
  {
    // Adaptation objective w.r.t. raw head outputs of a 4-sample desk batch.
    const ModelConfig mc = ModelConfig::desk();
    const Tensor img0 = gaussian({4, mc.img_width()}, rng);
    const Tensor txt = unit_rows({4, mc.txt_width()}, rng);
    const Tensor clip_img = unit_rows({4, mc.img_width()}, rng);
    const Tensor clip_txt = unit_rows({4, mc.txt_width()}, rng);
    check("l_adp.outputs", [&](Tape& t, const Var& x) {
      return phase_losses(Phase::adaptation, ad::row_l2_normalize(x), t.constant(clip_img), t.constant(txt),
                          t.constant(clip_txt), align)
          .total;
    }, img0);
  }
  {
    // Same objective through the whole DoRA-wrapped desk model.
    const ModelConfig mc = ModelConfig::desk();
    BrainDecoder model = BrainDecoder::init(mc, rng);
    model.apply_peft(PeftConfig{PeftKind::dora, 4}, rng);
    model.set_trainability(Phase::adaptation);
    const Tensor voxels = gaussian({4, mc.pooled_width}, rng);
    const Tensor clip_img = unit_rows({4, mc.img_width()}, rng);
    const Tensor clip_txt = unit_rows({4, mc.txt_width()}, rng);
    for (const char* target : {"image_head.dora_m", "translator.0.linear.weight"}) {
      const Tensor* param = nullptr;
      for (auto& p : model.parameters()) {
        if (p.name == target) param = p.value;
      }
      if (param == nullptr) throw Error(std::string("gradient suite: no parameter ") + target);
      check(std::string("l_adp.model.") + target, [&, param](Tape& t, const Var& x) {
        ParamBinder binder(t);
        binder.alias(*param, x);
        const ForwardOutputs f = model.forward(binder, voxels);
        return phase_losses(Phase::adaptation, f.pred_img, t.constant(clip_img), f.pred_txt, t.constant(clip_txt),
                            align)
            .total;
      }, *param);
    }
  }
  return out;
}

}  // namespace sfbd
