#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>

#include "sfbd/nn.hpp"

namespace sfbd {

enum class PeftKind : std::uint8_t { none, lora, dora };

struct PeftConfig {
  PeftKind kind = PeftKind::none;
  std::size_t rank = 8;

  friend bool operator==(const PeftConfig&, const PeftConfig&) = default;
};

std::string to_string(PeftKind kind);
PeftKind parse_peft_kind(const std::string& s);

/// Frozen base plus scaling * B * A. Scaling is alpha / rank.
struct LoraLinear {
  LinearLayer base;
  Tensor a;  // rank x in
  Tensor b;  // out x rank
  std::size_t rank = 0;
  double alpha = 0.0;

  // A ~ uniform(+-1/sqrt(in)), B = 0, alpha = rank.
  static LoraLinear wrap(LinearLayer base, std::size_t rank, Rng& rng);
  double scaling() const { return alpha / static_cast<double>(rank); }
};

/// W' = m * (W0 + B A) / ||W0 + B A||_c where ||.||_c is the L2 norm of each
/// column of the out x in matrix and m holds one magnitude per input column.
struct DoraLinear {
  LinearLayer base;
  Tensor a;          // rank x in
  Tensor b;          // out x rank
  Tensor magnitude;  // 1 x in
  std::size_t rank = 0;

  // B = 0 and m = column norms of W0, so the wrapped layer starts equal to the base.
  static DoraLinear wrap(LinearLayer base, std::size_t rank, Rng& rng);
};

Var lora_effective_weight(ParamBinder& binder, const LoraLinear& layer);
Var dora_effective_weight(ParamBinder& binder, const DoraLinear& layer);
Tensor effective_weight(const LoraLinear& layer);
Tensor effective_weight(const DoraLinear& layer);

Var adapter_forward(ParamBinder& binder, const LoraLinear& layer, const Var& x);
Var adapter_forward(ParamBinder& binder, const DoraLinear& layer, const Var& x);

// Folds the adapter into a plain layer carrying the base bias.
LinearLayer merge(const LoraLinear& layer);
LinearLayer merge(const DoraLinear& layer);
inline LinearLayer merge(const LinearLayer& layer) { return layer; }

/// Trainable numbers an adapter adds on top of a frozen out x in base.
std::size_t adapter_param_count(std::size_t in, std::size_t out, const PeftConfig& peft);

/// A projection head: a plain linear layer or one wrapped by an adapter.
using Head = std::variant<LinearLayer, LoraLinear, DoraLinear>;

Head wrap_head(const LinearLayer& base, const PeftConfig& peft, Rng& rng);
Var head_forward(ParamBinder& binder, const Head& head, const Var& x);
const LinearLayer& head_base(const Head& head);
LinearLayer merge(const Head& head);

}  // namespace sfbd
