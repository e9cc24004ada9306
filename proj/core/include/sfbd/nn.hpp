#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>

#include "sfbd/autodiff.hpp"
#include "sfbd/tensor.hpp"

namespace sfbd {

using Rng = std::mt19937_64;

/// Puts model parameters on a tape, remembering which node each one became so
/// gradients can be looked up after backward().
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape, bool grads_enabled = true)
      : tape_(tape), grads_enabled_(grads_enabled) {}

  Var bind(const Tensor& param, bool trainable, std::string label = {});
  std::optional<Var> find(const Tensor& param) const;
  // Makes later bind(param) calls return `v`; used to differentiate through a
  // model with respect to an externally supplied value of one parameter.
  void alias(const Tensor& param, Var v);
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool grads_enabled_;
  std::unordered_map<const Tensor*, Var> bound_;
};

struct LinearLayer {
  Tensor weight;  // out x in
  Tensor bias;    // out
  bool trainable = true;

  static LinearLayer init(std::size_t in, std::size_t out, Rng& rng);
  std::size_t in_features() const { return weight.cols(); }
  std::size_t out_features() const { return weight.rows(); }
  std::size_t num_params() const { return weight.size() + bias.size(); }
};

Var linear_forward(ParamBinder& binder, const LinearLayer& layer, const Var& x);
Tensor linear_forward(const LinearLayer& layer, const Tensor& x);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  bool trainable = true;

  static LayerNorm init(std::size_t width);
  std::size_t num_params() const { return gamma.size() + beta.size(); }
};

Var layer_norm_forward(ParamBinder& binder, const LayerNorm& norm, const Var& x);

enum class Activation : std::uint8_t { none, relu, gelu };

// linear -> layer-norm -> activation, with an optional identity skip.
struct MlpBlock {
  LinearLayer linear;
  LayerNorm norm;
  Activation activation = Activation::gelu;
  bool residual = false;

  static MlpBlock init(std::size_t in, std::size_t out, bool residual, Rng& rng);
  std::size_t num_params() const { return linear.num_params() + norm.num_params(); }
  void set_trainable(bool t) {
    linear.trainable = t;
    norm.trainable = t;
  }
};

Var mlp_block_forward(ParamBinder& binder, const MlpBlock& block, const Var& x);

/// Half-open input slice [begin, end) feeding output column j.
struct PoolSlice {
  std::size_t begin;
  std::size_t end;
};
PoolSlice pool_slice(std::size_t in_width, std::size_t out_width, std::size_t j);

Tensor adaptive_max_pool_1d(const Tensor& x, std::size_t out_width);
Var adaptive_max_pool_1d(const Var& x, std::size_t out_width);

}  // namespace sfbd
