#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sfbd/linalg.hpp"
#include "sfbd/tensor.hpp"

namespace sfbd {

class Tape;

enum class Op : std::uint8_t {
  leaf,
  matmul,
  transpose,
  reshape,
  add,
  sub,
  mul,
  div,
  add_scalar,
  scale,
  relu,
  exp,
  log,
  abs,
  gelu,
  sum,
  mean,
  softmax_rows,
  log_softmax_rows,
  row_l2_normalize,
  col_l2_normalize,
  scale_cols,
  add_row_vector,
  concat_cols,
  svd_spectrum,
  layer_norm_rows,
  max_pool,
  custom,
};

const char* op_name(Op op);

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Given the gradient of a node's output, returns one gradient per parent.
// An empty tensor means "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

struct Node {
  std::size_t id = 0;
  Op op = Op::leaf;
  std::string label;
  std::vector<std::size_t> parents;
  Tensor value;
  BackwardFn backward;
  bool requires_grad = false;
};

/// Gradients keyed by node id. Missing entries are zero.
class GradMap {
 public:
  void accumulate(std::size_t id, const Tensor& g);
  bool contains(const Var& v) const { return grads_.count(v.id()) != 0; }
  // Gradient for v, or a zero tensor of v's shape when v was not reached.
  Tensor of(const Var& v) const;
  const std::unordered_map<std::size_t, Tensor>& raw() const { return grads_; }

  friend bool operator==(const GradMap&, const GradMap&) = default;

 private:
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Append-only record of operations. Confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true, std::string label = {});
  Var constant(Tensor value, std::string label = {}) {
    return leaf(std::move(value), false, std::move(label));
  }

  // Registers a computed node. Parents must already be on this tape; the
  // value must be finite.
  Var record(Op op, Tensor value, const std::vector<Var>& parents, BackwardFn backward,
             std::string label = {});

  GradMap backward(const Var& loss) const;

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);

Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var abs(const Var& a);
Var gelu(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);

Var softmax_rows(const Var& a, double temperature);
Var log_softmax_rows(const Var& a, double temperature);

Var row_l2_normalize(const Var& a);
Var col_l2_normalize(const Var& a);
// out[i][j] = a[i][j] * v[j], v of length cols(a).
Var scale_cols(const Var& a, const Var& v);
// out[i][j] = a[i][j] + v[j]; the only broadcast the tape supports.
Var add_row_vector(const Var& a, const Var& v);
Var concat_cols(const Var& a, const Var& b);

// Singular values of a matrix, sorted descending. Backward uses
// d(sigma_k)/dA = u_k v_k^T.
Var svd_spectrum(const Var& a, const SvdOptions& opts = {});

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

}  // namespace ad

/// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12).
using ScalarFn = std::function<Var(Tape&, const Var&)>;
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

}  // namespace sfbd
