#pragma once

#include <vector>

#include "sfbd/error.hpp"
#include "sfbd/tensor.hpp"

namespace sfbd {

struct SvdOptions {
  int max_sweeps = 60;
  double tolerance = 1e-12;  // relative off-diagonal threshold
};

class SvdConvergenceError : public NumericError {
 public:
  SvdConvergenceError(const std::string& what, int sweeps) : NumericError(what), sweeps_(sweeps) {}
  int sweeps() const { return sweeps_; }

 private:
  int sweeps_;
};

/// Thin SVD: a = u * diag(s) * v^T with u m x k, v n x k, k = min(m, n),
/// s sorted descending. Columns of u for zero singular values are zero.
struct Svd {
  Tensor u;
  std::vector<double> s;
  Tensor v;
  int sweeps = 0;
};

// One-sided (Hestenes) Jacobi rotations applied to the narrower side.
Svd jacobi_svd(const Tensor& a, const SvdOptions& opts = {});

Tensor reconstruct(const Svd& svd);

/// Rows of `x` projected onto its top principal axes after centering.
Tensor pca_project(const Tensor& x, std::size_t components);

}  // namespace sfbd
