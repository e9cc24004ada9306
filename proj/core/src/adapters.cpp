#include "sfbd/adapters.hpp"

#include <cmath>

#include "sfbd/error.hpp"

namespace sfbd {

std::string to_string(PeftKind kind) {
  switch (kind) {
    case PeftKind::none: return "none";
    case PeftKind::lora: return "lora";
    case PeftKind::dora: return "dora";
  }
  return "?";
}

PeftKind parse_peft_kind(const std::string& s) {
  if (s == "none") return PeftKind::none;
  if (s == "lora") return PeftKind::lora;
  if (s == "dora") return PeftKind::dora;
  throw ConfigError("unknown peft kind '" + s + "' (expected none, lora or dora)");
}

static Tensor init_down_projection(std::size_t rank, std::size_t in, Rng& rng) {
  if (rank == 0) throw ConfigError("adapter rank must be >= 1");
  Tensor a({rank, in});
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : a.data()) v = dist(rng);
  return a;
}

LoraLinear LoraLinear::wrap(LinearLayer base, std::size_t rank, Rng& rng) {
  LoraLinear l;
  l.a = init_down_projection(rank, base.in_features(), rng);
  l.b = Tensor({base.out_features(), rank}, 0.0);
  l.rank = rank;
  l.alpha = static_cast<double>(rank);
  l.base = std::move(base);
  l.base.trainable = false;
  return l;
}

DoraLinear DoraLinear::wrap(LinearLayer base, std::size_t rank, Rng& rng) {
  DoraLinear d;
  d.a = init_down_projection(rank, base.in_features(), rng);
  d.b = Tensor({base.out_features(), rank}, 0.0);
  d.rank = rank;
  const std::size_t out = base.out_features(), in = base.in_features();
  d.magnitude = Tensor({1, in}, 0.0);
  for (std::size_t i = 0; i < out; ++i) {
    for (std::size_t j = 0; j < in; ++j) d.magnitude[j] += base.weight.at(i, j) * base.weight.at(i, j);
  }
  for (std::size_t j = 0; j < in; ++j) {
    d.magnitude[j] = std::sqrt(d.magnitude[j]);
    if (!(d.magnitude[j] > 0.0)) {
      throw NumericError("DoRA wrap: base weight column " + std::to_string(j) + " has zero norm");
    }
  }
  d.base = std::move(base);
  d.base.trainable = false;
  return d;
}

Var lora_effective_weight(ParamBinder& binder, const LoraLinear& layer) {
  Var w0 = binder.bind(layer.base.weight, false, "lora.w0");
  Var a = binder.bind(layer.a, true, "lora.a");
  Var b = binder.bind(layer.b, true, "lora.b");
  return ad::add(w0, ad::scale(ad::matmul(b, a), layer.scaling()));
}

Var dora_effective_weight(ParamBinder& binder, const DoraLinear& layer) {
  Var w0 = binder.bind(layer.base.weight, false, "dora.w0");
  Var a = binder.bind(layer.a, true, "dora.a");
  Var b = binder.bind(layer.b, true, "dora.b");
  Var m = binder.bind(layer.magnitude, true, "dora.m");
  Var direction = ad::col_l2_normalize(ad::add(w0, ad::matmul(b, a)));
  return ad::scale_cols(direction, m);
}

Tensor effective_weight(const LoraLinear& layer) {
  Tape tape;
  ParamBinder binder(tape, false);
  return lora_effective_weight(binder, layer).value();
}

Tensor effective_weight(const DoraLinear& layer) {
  Tape tape;
  ParamBinder binder(tape, false);
  return dora_effective_weight(binder, layer).value();
}

template <typename Layer>
static Var wrapped_forward(ParamBinder& binder, const Layer& layer, const Var& w, const Var& x) {
  if (x.value().ndim() != 2 || x.value().cols() != layer.base.in_features()) {
    throw ShapeError("adapter: input " + shape_string(x.shape()) + " does not match layer width " +
                     std::to_string(layer.base.in_features()));
  }
  Var bias = binder.bind(layer.base.bias, false, "bias");
  return ad::add_row_vector(ad::matmul(x, ad::transpose(w)), bias);
}

Var adapter_forward(ParamBinder& binder, const LoraLinear& layer, const Var& x) {
  return wrapped_forward(binder, layer, lora_effective_weight(binder, layer), x);
}

Var adapter_forward(ParamBinder& binder, const DoraLinear& layer, const Var& x) {
  return wrapped_forward(binder, layer, dora_effective_weight(binder, layer), x);
}

LinearLayer merge(const LoraLinear& layer) {
  return LinearLayer{effective_weight(layer), layer.base.bias, true};
}

LinearLayer merge(const DoraLinear& layer) {
  return LinearLayer{effective_weight(layer), layer.base.bias, true};
}

std::size_t adapter_param_count(std::size_t in, std::size_t out, const PeftConfig& peft) {
  switch (peft.kind) {
    case PeftKind::none: return 0;
    case PeftKind::lora: return peft.rank * (in + out);
    case PeftKind::dora: return peft.rank * (in + out) + in;
  }
  return 0;
}

Head wrap_head(const LinearLayer& base, const PeftConfig& peft, Rng& rng) {
  switch (peft.kind) {
    case PeftKind::none: return base;
    case PeftKind::lora: return LoraLinear::wrap(base, peft.rank, rng);
    case PeftKind::dora: return DoraLinear::wrap(base, peft.rank, rng);
  }
  return base;
}

Var head_forward(ParamBinder& binder, const Head& head, const Var& x) {
  return std::visit(
      [&](const auto& h) -> Var {
        using T = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          return linear_forward(binder, h, x);
        } else {
          return adapter_forward(binder, h, x);
        }
      },
      head);
}

const LinearLayer& head_base(const Head& head) {
  return std::visit(
      [](const auto& h) -> const LinearLayer& {
        using T = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          return h;
        } else {
          return h.base;
        }
      },
      head);
}

LinearLayer merge(const Head& head) {
  return std::visit([](const auto& h) { return merge(h); }, head);
}

}  // namespace sfbd
