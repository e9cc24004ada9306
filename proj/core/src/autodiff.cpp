#include "sfbd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "sfbd/error.hpp"

namespace sfbd {

const char* op_name(Op op) {
  switch (op) {
    case Op::leaf: return "leaf";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::reshape: return "reshape";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::div: return "div";
    case Op::add_scalar: return "add_scalar";
    case Op::scale: return "scale";
    case Op::relu: return "relu";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::abs: return "abs";
    case Op::gelu: return "gelu";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::softmax_rows: return "softmax_rows";
    case Op::log_softmax_rows: return "log_softmax_rows";
    case Op::row_l2_normalize: return "row_l2_normalize";
    case Op::col_l2_normalize: return "col_l2_normalize";
    case Op::scale_cols: return "scale_cols";
    case Op::add_row_vector: return "add_row_vector";
    case Op::concat_cols: return "concat_cols";
    case Op::svd_spectrum: return "svd_spectrum";
    case Op::layer_norm_rows: return "layer_norm_rows";
    case Op::max_pool: return "max_pool";
    case Op::custom: return "custom";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }
bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

void GradMap::accumulate(std::size_t id, const Tensor& g) {
  auto it = grads_.find(id);
  if (it == grads_.end()) {
    grads_.emplace(id, g);
    return;
  }
  auto dst = it->second.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Tensor GradMap::of(const Var& v) const {
  auto it = grads_.find(v.id());
  if (it != grads_.end()) return it->second;
  return Tensor(v.shape(), 0.0);
}

Var Tape::leaf(Tensor value, bool requires_grad, std::string label) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value in leaf " + (label.empty() ? std::string("<unnamed>") : label));
  }
  Node n;
  n.id = nodes_.size();
  n.op = Op::leaf;
  n.label = std::move(label);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Op op, Tensor value, const std::vector<Var>& parents, BackwardFn backward,
                 std::string label) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") +
                       (label.empty() ? op_name(op) : label.c_str()));
  }
  Node n;
  n.id = nodes_.size();
  n.op = op;
  n.label = std::move(label);
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (&p.tape() != this) throw Error("operand belongs to a different tape");
    n.parents.push_back(p.id());
    n.requires_grad = n.requires_grad || p.requires_grad();
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& loss) const {
  if (&loss.tape() != this) throw Error("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor(loss.shape(), 1.0);
  GradMap out;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (grads[i].empty() || !n.requires_grad) continue;
    if (n.op == Op::leaf) {
      out.accumulate(i, grads[i]);
      continue;
    }
    if (!n.backward) continue;
    std::vector<Tensor> pg = n.backward(grads[i]);
    for (std::size_t p = 0; p < n.parents.size() && p < pg.size(); ++p) {
      const std::size_t pid = n.parents[p];
      if (pg[p].empty() || !nodes_[pid].requires_grad) continue;
      if (pg[p].shape() != nodes_[pid].value.shape()) {
        throw ShapeError(std::string("backward of ") + op_name(n.op) + " produced gradient " +
                         shape_string(pg[p].shape()) + " for operand " +
                         shape_string(nodes_[pid].value.shape()));
      }
      if (grads[pid].empty()) {
        grads[pid] = std::move(pg[p]);
      } else {
        auto dst = grads[pid].data();
        auto src = pg[p].data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
    grads[i] = Tensor();
  }
  return out;
}

namespace ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out = a;
  for (auto& v : out.data()) v = f(v);
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

void require_temperature(double t) {
  if (!(t > 0.0)) throw ConfigError("softmax temperature must be positive, got " + std::to_string(t));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = matmul_values(a.value(), b.value());
  return a.tape().record(Op::matmul, std::move(out), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{matmul_nt_values(g, b.value()), matmul_tn_values(a.value(), g)};
  });
}

Var transpose(const Var& a) {
  return a.tape().record(Op::transpose, a.value().transposed(), {a},
                         [](const Tensor& g) { return std::vector<Tensor>{g.transposed()}; });
}

Var reshape(const Var& a, Shape shape) {
  const Shape from = a.shape();
  return a.tape().record(Op::reshape, a.value().reshaped(std::move(shape)), {a},
                         [from](const Tensor& g) { return std::vector<Tensor>{g.reshaped(from)}; });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record(Op::add, std::move(out), {a, b},
                         [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record(Op::sub, std::move(out), {a, b}, [](const Tensor& g) {
    return std::vector<Tensor>{g, map_values(g, [](double v) { return -v; })};
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return a.tape().record(Op::mul, hadamard(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    return std::vector<Tensor>{hadamard(g, b.value()), hadamard(g, a.value())};
  });
}

Var div(const Var& a, const Var& b) {
  require_same_shape(a, b, "div");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = b.value()[i];
    if (d == 0.0) throw NumericError("div: zero denominator at index " + std::to_string(i));
    out[i] /= d;
  }
  return a.tape().record(Op::div, std::move(out), {a, b}, [a, b](const Tensor& g) {
    Tensor ga = g, gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = b.value()[i];
      ga[i] = g[i] / d;
      gb[i] = -g[i] * a.value()[i] / (d * d);
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var add_scalar(const Var& a, double c) {
  return a.tape().record(Op::add_scalar, map_values(a.value(), [c](double v) { return v + c; }),
                         {a}, [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Var scale(const Var& a, double c) {
  return a.tape().record(Op::scale, map_values(a.value(), [c](double v) { return v * c; }), {a},
                         [c](const Tensor& g) {
                           return std::vector<Tensor>{map_values(g, [c](double v) { return v * c; })};
                         });
}

Var relu(const Var& a) {
  return a.tape().record(Op::relu, map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }),
                         {a}, [a](const Tensor& g) {
                           Tensor out = g;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             if (!(a.value()[i] > 0.0)) out[i] = 0.0;
                           }
                           return std::vector<Tensor>{std::move(out)};
                         });
}

Var exp(const Var& a) {
  auto out = std::make_shared<Tensor>(map_values(a.value(), [](double v) { return std::exp(v); }));
  return a.tape().record(Op::exp, *out, {a}, [out](const Tensor& g) {
    return std::vector<Tensor>{hadamard(g, *out)};
  });
}

Var log(const Var& a) {
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    if (!(a.value()[i] > 0.0)) {
      throw NumericError("log: non-positive operand " + std::to_string(a.value()[i]) + " at index " +
                         std::to_string(i));
    }
  }
  return a.tape().record(Op::log, map_values(a.value(), [](double v) { return std::log(v); }), {a},
                         [a](const Tensor& g) {
                           Tensor out = g;
                           for (std::size_t i = 0; i < g.size(); ++i) out[i] /= a.value()[i];
                           return std::vector<Tensor>{std::move(out)};
                         });
}

Var abs(const Var& a) {
  return a.tape().record(Op::abs, map_values(a.value(), [](double v) { return std::abs(v); }), {a},
                         [a](const Tensor& g) {
                           Tensor out = g;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double v = a.value()[i];
                             out[i] = v > 0.0 ? g[i] : (v < 0.0 ? -g[i] : 0.0);
                           }
                           return std::vector<Tensor>{std::move(out)};
                         });
}

Var gelu(const Var& a) {
  return a.tape().record(
      Op::gelu, map_values(a.value(), [](double v) { return v * normal_cdf(v); }), {a},
      [a](const Tensor& g) {
        Tensor out = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double x = a.value()[i];
          out[i] = g[i] * (normal_cdf(x) + x * normal_pdf(x));
        }
        return std::vector<Tensor>{std::move(out)};
      });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Op::sum, Tensor::scalar(s), {a}, [a](const Tensor& g) {
    return std::vector<Tensor>{Tensor(a.shape(), g.item())};
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record(Op::mean, Tensor::scalar(s / n), {a}, [a, n](const Tensor& g) {
    return std::vector<Tensor>{Tensor(a.shape(), g.item() / n)};
  });
}

Var softmax_rows(const Var& a, double temperature) {
  require_temperature(temperature);
  require_matrix(a.value(), "softmax_rows");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  auto p = std::make_shared<Tensor>(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto xr = x.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end()) / temperature;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(xr[j] / temperature - mx);
      p->at(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) p->at(i, j) /= z;
  }
  return a.tape().record(Op::softmax_rows, *p, {a}, [p, temperature](const Tensor& g) {
    const std::size_t m = p->rows(), n = p->cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * p->at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        out.at(i, j) = p->at(i, j) * (g.at(i, j) - dot) / temperature;
      }
    }
    return std::vector<Tensor>{std::move(out)};
  });
}

Var log_softmax_rows(const Var& a, double temperature) {
  require_temperature(temperature);
  require_matrix(a.value(), "log_softmax_rows");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out({m, n});
  auto p = std::make_shared<Tensor>(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto xr = x.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end()) / temperature;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xr[j] / temperature - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = xr[j] / temperature - lz;
      p->at(i, j) = std::exp(out.at(i, j));
    }
  }
  return a.tape().record(Op::log_softmax_rows, std::move(out), {a}, [p, temperature](const Tensor& g) {
    const std::size_t m = p->rows(), n = p->cols();
    Tensor gi({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < n; ++j) gs += g.at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        gi.at(i, j) = (g.at(i, j) - p->at(i, j) * gs) / temperature;
      }
    }
    return std::vector<Tensor>{std::move(gi)};
  });
}

Var row_l2_normalize(const Var& a) {
  require_matrix(a.value(), "row_l2_normalize");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  Tensor y({m, n});
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : x.row(i)) s += v * v;
    const double nrm = std::sqrt(s);
    if (nrm == 0.0) throw NumericError("row_l2_normalize: row " + std::to_string(i) + " is all zeros");
    (*norms)[i] = nrm;
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = x.at(i, j) / nrm;
  }
  auto yv = std::make_shared<Tensor>(y);
  return a.tape().record(Op::row_l2_normalize, std::move(y), {a}, [yv, norms](const Tensor& g) {
    const std::size_t m = yv->rows(), n = yv->cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += yv->at(i, j) * g.at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        out.at(i, j) = (g.at(i, j) - yv->at(i, j) * dot) / (*norms)[i];
      }
    }
    return std::vector<Tensor>{std::move(out)};
  });
}

Var col_l2_normalize(const Var& a) {
  require_matrix(a.value(), "col_l2_normalize");
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  auto norms = std::make_shared<std::vector<double>>(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) (*norms)[j] += x.at(i, j) * x.at(i, j);
  }
  for (std::size_t j = 0; j < n; ++j) {
    (*norms)[j] = std::sqrt((*norms)[j]);
    if ((*norms)[j] <= 1e-12) {
      throw NumericError("col_l2_normalize: column " + std::to_string(j) + " has near-zero norm");
    }
  }
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y.at(i, j) = x.at(i, j) / (*norms)[j];
  }
  auto yv = std::make_shared<Tensor>(y);
  return a.tape().record(Op::col_l2_normalize, std::move(y), {a}, [yv, norms](const Tensor& g) {
    const std::size_t m = yv->rows(), n = yv->cols();
    std::vector<double> dots(n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) dots[j] += yv->at(i, j) * g.at(i, j);
    }
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        out.at(i, j) = (g.at(i, j) - yv->at(i, j) * dots[j]) / (*norms)[j];
      }
    }
    return std::vector<Tensor>{std::move(out)};
  });
}

Var scale_cols(const Var& a, const Var& v) {
  require_matrix(a.value(), "scale_cols");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (v.value().size() != n) {
    throw ShapeError("scale_cols: vector " + shape_string(v.shape()) + " does not match columns of " +
                     shape_string(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) *= v.value()[j];
  }
  return a.tape().record(Op::scale_cols, std::move(out), {a, v}, [a, v](const Tensor& g) {
    const std::size_t m = g.rows(), n = g.cols();
    Tensor ga({m, n});
    Tensor gv(v.shape(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        ga.at(i, j) = g.at(i, j) * v.value()[j];
        gv[j] += g.at(i, j) * a.value().at(i, j);
      }
    }
    return std::vector<Tensor>{std::move(ga), std::move(gv)};
  });
}

Var add_row_vector(const Var& a, const Var& v) {
  require_matrix(a.value(), "add_row_vector");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (v.value().size() != n) {
    throw ShapeError("add_row_vector: vector " + shape_string(v.shape()) +
                     " does not match columns of " + shape_string(a.shape()));
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += v.value()[j];
  }
  return a.tape().record(Op::add_row_vector, std::move(out), {a, v}, [v](const Tensor& g) {
    Tensor gv(v.shape(), 0.0);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < g.cols(); ++j) gv[j] += g.at(i, j);
    }
    return std::vector<Tensor>{g, std::move(gv)};
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_matrix(a.value(), "concat_cols");
  require_matrix(b.value(), "concat_cols");
  const std::size_t m = a.value().rows(), p = a.value().cols(), q = b.value().cols();
  if (b.value().rows() != m) {
    throw ShapeError("concat_cols: row counts differ, " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out({m, p + q});
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().row(i).begin(), p, out.row(i).begin());
    std::copy_n(b.value().row(i).begin(), q, out.row(i).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return a.tape().record(Op::concat_cols, std::move(out), {a, b}, [m, p, q](const Tensor& g) {
    Tensor ga({m, p}), gb({m, q});
    for (std::size_t i = 0; i < m; ++i) {
      auto gr = g.row(i);
      std::copy_n(gr.begin(), p, ga.row(i).begin());
      std::copy_n(gr.begin() + static_cast<std::ptrdiff_t>(p), q, gb.row(i).begin());
    }
    return std::vector<Tensor>{std::move(ga), std::move(gb)};
  });
}

Var svd_spectrum(const Var& a, const SvdOptions& opts) {
  require_matrix(a.value(), "svd_spectrum");
  auto svd = std::make_shared<Svd>(jacobi_svd(a.value(), opts));
  Tensor s({svd->s.size()}, svd->s);
  return a.tape().record(Op::svd_spectrum, std::move(s), {a}, [svd](const Tensor& g) {
    const std::size_t m = svd->u.rows(), n = svd->v.rows(), k = svd->s.size();
    Tensor out({m, n});
    for (std::size_t t = 0; t < k; ++t) {
      const double gk = g[t];
      if (gk == 0.0) continue;
      for (std::size_t i = 0; i < m; ++i) {
        const double ui = gk * svd->u.at(i, t);
        if (ui == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) out.at(i, j) += ui * svd->v.at(j, t);
      }
    }
    return std::vector<Tensor>{std::move(out)};
  });
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_matrix(x.value(), "layer_norm_rows");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm_rows: affine parameters do not match width " + std::to_string(n));
  }
  auto xhat = std::make_shared<Tensor>(Shape{m, n});
  auto rstd = std::make_shared<std::vector<double>>(m);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    auto xr = x.value().row(i);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (xr[j] - mu) * r;
      xhat->at(i, j) = h;
      out.at(i, j) = h * gamma.value()[j] + beta.value()[j];
    }
  }
  return x.tape().record(
      Op::layer_norm_rows, std::move(out), {x, gamma, beta}, [xhat, rstd, gamma, beta](const Tensor& g) {
        const std::size_t m = xhat->rows(), n = xhat->cols();
        const double nn = static_cast<double>(n);
        Tensor gx({m, n});
        Tensor gg(gamma.shape(), 0.0), gb(beta.shape(), 0.0);
        std::vector<double> gh(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            gg[j] += g.at(i, j) * xhat->at(i, j);
            gb[j] += g.at(i, j);
            gh[j] = g.at(i, j) * gamma.value()[j];
            mean_gh += gh[j];
            mean_ghx += gh[j] * xhat->at(i, j);
          }
          mean_gh /= nn;
          mean_ghx /= nn;
          for (std::size_t j = 0; j < n; ++j) {
            gx.at(i, j) = (*rstd)[i] * (gh[j] - mean_gh - xhat->at(i, j) * mean_ghx);
          }
        }
        return std::vector<Tensor>{std::move(gx), std::move(gg), std::move(gb)};
      });
}

}  // namespace ad

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tensor analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x, true, "x");
    Var loss = f(tape, xv);
    analytic = tape.backward(loss).of(xv);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    Var xv = tape.leaf(at, true, "x");
    return f(tape, xv).value().item();
  };
  double worst = 0.0;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval(probe);
    probe[i] = x[i] - h;
    const double down = eval(probe);
    probe[i] = x[i];
    const double central = (up - down) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - central) / (std::abs(analytic[i]) + std::abs(central) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace sfbd
