#include "sfbd/optim.hpp"

#include <cmath>
#include <numbers>

#include "sfbd/error.hpp"

namespace sfbd {

void AdamW::step(std::span<const ParamSlot> params, double lr) {
  if (!(lr > 0.0)) throw ConfigError("AdamW: learning rate must be positive");
  for (const auto& p : params) {
    if (p.value->shape() != p.grad->shape()) {
      throw ShapeError("AdamW: gradient " + shape_string(p.grad->shape()) + " does not match parameter " +
                       p.name + " " + shape_string(p.value->shape()));
    }
    if (!p.grad->all_finite()) throw NumericError("AdamW: non-finite gradient for parameter " + p.name);
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (const auto& p : params) {
    auto [it, inserted] = moments_.try_emplace(p.name);
    if (inserted || it->second.first.shape() != p.value->shape()) {
      it->second.first = Tensor(p.value->shape(), 0.0);
      it->second.second = Tensor(p.value->shape(), 0.0);
    }
    auto m = it->second.first.data();
    auto v = it->second.second.data();
    auto w = p.value->data();
    auto g = p.grad->data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * cfg_.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamW::restore(std::int64_t steps, std::map<std::string, AdamMoments> moments) {
  if (steps < 0) throw ConfigError("AdamW: negative step count");
  steps_ = steps;
  moments_ = std::move(moments);
}

std::size_t LrSchedule::warmup_steps() const {
  return static_cast<std::size_t>(warmup_fraction * static_cast<double>(total_steps));
}

double lr_at(const LrSchedule& s, std::size_t step) {
  if (!(s.max_lr > 0.0) || s.total_steps == 0 || !(s.floor_divisor >= 1.0)) {
    throw ConfigError("lr schedule: invalid configuration");
  }
  if (step >= s.total_steps) {
    throw ConfigError("lr schedule: step " + std::to_string(step) + " outside [0," +
                      std::to_string(s.total_steps) + ")");
  }
  const double floor = s.max_lr / s.floor_divisor;
  const std::size_t warm = s.warmup_steps();
  if (step < warm) {
    return floor + (s.max_lr - floor) * static_cast<double>(step) / static_cast<double>(warm);
  }
  const std::size_t decay_span = s.total_steps - 1 - warm;
  if (decay_span == 0) return s.max_lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(decay_span);
  return floor + (s.max_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace sfbd
