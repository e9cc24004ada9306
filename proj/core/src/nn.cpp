#include "sfbd/nn.hpp"

#include <cmath>
#include <memory>

#include "sfbd/error.hpp"

namespace sfbd {

Var ParamBinder::bind(const Tensor& param, bool trainable, std::string label) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(param, grads_enabled_ && trainable, std::move(label));
  bound_.emplace(&param, v);
  return v;
}

std::optional<Var> ParamBinder::find(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return std::nullopt;
  return it->second;
}

void ParamBinder::alias(const Tensor& param, Var v) {
  if (v.shape() != param.shape()) {
    throw ShapeError("alias: " + shape_string(v.shape()) + " for a parameter of shape " + shape_string(param.shape()));
  }
  bound_.insert_or_assign(&param, v);
}

LinearLayer LinearLayer::init(std::size_t in, std::size_t out, Rng& rng) {
  LinearLayer layer;
  layer.weight = Tensor({out, in});
  layer.bias = Tensor({out}, 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : layer.weight.data()) w = dist(rng);
  return layer;
}

Var linear_forward(ParamBinder& binder, const LinearLayer& layer, const Var& x) {
  if (x.value().ndim() != 2 || x.value().cols() != layer.in_features()) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match layer width " +
                     std::to_string(layer.in_features()));
  }
  Var w = binder.bind(layer.weight, layer.trainable, "weight");
  Var b = binder.bind(layer.bias, layer.trainable, "bias");
  return ad::add_row_vector(ad::matmul(x, ad::transpose(w)), b);
}

Tensor linear_forward(const LinearLayer& layer, const Tensor& x) {
  if (x.ndim() != 2 || x.cols() != layer.in_features()) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match layer width " +
                     std::to_string(layer.in_features()));
  }
  Tensor out = matmul_nt_values(x, layer.weight);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += layer.bias[j];
  }
  return out;
}

LayerNorm LayerNorm::init(std::size_t width) {
  return LayerNorm{Tensor({width}, 1.0), Tensor({width}, 0.0), true};
}

Var layer_norm_forward(ParamBinder& binder, const LayerNorm& norm, const Var& x) {
  Var g = binder.bind(norm.gamma, norm.trainable, "ln.gamma");
  Var b = binder.bind(norm.beta, norm.trainable, "ln.beta");
  return ad::layer_norm_rows(x, g, b);
}

MlpBlock MlpBlock::init(std::size_t in, std::size_t out, bool residual, Rng& rng) {
  if (residual && in != out) {
    throw ConfigError("residual block needs equal widths, got " + std::to_string(in) + " -> " +
                      std::to_string(out));
  }
  return MlpBlock{LinearLayer::init(in, out, rng), LayerNorm::init(out), Activation::gelu, residual};
}

Var mlp_block_forward(ParamBinder& binder, const MlpBlock& block, const Var& x) {
  Var h = layer_norm_forward(binder, block.norm, linear_forward(binder, block.linear, x));
  switch (block.activation) {
    case Activation::none: break;
    case Activation::relu: h = ad::relu(h); break;
    case Activation::gelu: h = ad::gelu(h); break;
  }
  return block.residual ? ad::add(x, h) : h;
}

PoolSlice pool_slice(std::size_t in_width, std::size_t out_width, std::size_t j) {
  return PoolSlice{j * in_width / out_width, (j + 1) * in_width / out_width};
}

static void check_pool_widths(std::size_t in_width, std::size_t out_width) {
  if (out_width == 0 || out_width > in_width) {
    throw ConfigError("adaptive_max_pool_1d: output width " + std::to_string(out_width) +
                      " invalid for input width " + std::to_string(in_width));
  }
}

namespace {

struct Pooled {
  Tensor values;
  std::vector<std::size_t> argmax;
};

Pooled pool_with_argmax(const Tensor& x, std::size_t out_width) {
  require_matrix(x, "adaptive_max_pool_1d");
  const std::size_t b = x.rows(), f = x.cols();
  check_pool_widths(f, out_width);
  Pooled p{Tensor({b, out_width}), std::vector<std::size_t>(b * out_width)};
  for (std::size_t i = 0; i < b; ++i) {
    auto xr = x.row(i);
    for (std::size_t j = 0; j < out_width; ++j) {
      const PoolSlice s = pool_slice(f, out_width, j);
      std::size_t best = s.begin;
      for (std::size_t k = s.begin + 1; k < s.end; ++k) {
        if (xr[k] > xr[best]) best = k;
      }
      p.values.at(i, j) = xr[best];
      p.argmax[i * out_width + j] = best;
    }
  }
  return p;
}

}  // namespace

Tensor adaptive_max_pool_1d(const Tensor& x, std::size_t out_width) {
  return pool_with_argmax(x, out_width).values;
}

Var adaptive_max_pool_1d(const Var& x, std::size_t out_width) {
  Pooled p = pool_with_argmax(x.value(), out_width);
  auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(p.argmax));
  const Shape in_shape = x.shape();
  return x.tape().record(Op::max_pool, std::move(p.values), {x},
                         [argmax, in_shape, out_width](const Tensor& g) {
                           Tensor gx(in_shape, 0.0);
                           for (std::size_t i = 0; i < in_shape[0]; ++i) {
                             for (std::size_t j = 0; j < out_width; ++j) {
                               gx.at(i, (*argmax)[i * out_width + j]) += g.at(i, j);
                             }
                           }
                           return std::vector<Tensor>{std::move(gx)};
                         });
}

}  // namespace sfbd
