#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "sfbd/tensor.hpp"

namespace sfbd {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct AdamMoments {
  Tensor first;
  Tensor second;
};

/// One parameter handed to the optimizer for a single update.
struct ParamSlot {
  std::string name;
  Tensor* value;
  const Tensor* grad;
};

/// AdamW with decoupled weight decay: p <- p - lr*wd*p, then the bias-corrected
/// Adam update. Moments are keyed by parameter name.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void step(std::span<const ParamSlot> params, double lr);

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return steps_; }
  const std::map<std::string, AdamMoments>& moments() const { return moments_; }

  void restore(std::int64_t steps, std::map<std::string, AdamMoments> moments);

 private:
  AdamWConfig cfg_;
  std::int64_t steps_ = 0;
  std::map<std::string, AdamMoments> moments_;
};

/// One-cycle schedule: linear warmup from max_lr/floor_divisor to max_lr, then
/// cosine decay back down to max_lr/floor_divisor at the final step.
struct LrSchedule {
  double max_lr = 1.5e-4;
  std::size_t total_steps = 1;
  double warmup_fraction = 0.1;
  double floor_divisor = 25.0;

  std::size_t warmup_steps() const;
};

double lr_at(const LrSchedule& schedule, std::size_t step);

}  // namespace sfbd
