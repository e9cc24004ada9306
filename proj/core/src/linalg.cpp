#include "sfbd/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sfbd {

namespace {

// Works on the columns of `w` (stored column-major as `cols` vectors of length `len`).
Svd jacobi_tall(std::vector<std::vector<double>> w, std::size_t len, const SvdOptions& opts) {
  const std::size_t n = w.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;

  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  auto rotate = [](std::vector<double>& a, std::vector<double>& b, double c, double s) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double ai = a[i], bi = b[i];
      a[i] = c * ai - s * bi;
      b[i] = s * ai + c * bi;
    }
  };

  int sweep = 0;
  bool converged = n < 2;
  while (!converged) {
    if (sweep == opts.max_sweeps) {
      throw SvdConvergenceError("jacobi_svd did not converge after " + std::to_string(sweep) +
                                    " sweeps",
                                sweep);
    }
    ++sweep;
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double alpha = dot(w[i], w[i]);
        const double beta = dot(w[j], w[j]);
        const double gamma = dot(w[i], w[j]);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= opts.tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate(w[i], w[j], c, s);
        rotate(v[i], v[j], c, s);
      }
    }
    converged = !rotated;
  }

  std::vector<double> sigma(n);
  for (std::size_t i = 0; i < n; ++i) sigma[i] = std::sqrt(dot(w[i], w[i]));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  Svd out;
  out.sweeps = sweep;
  out.u = Tensor({len, n});
  out.v = Tensor({n, n});
  out.s.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t src = order[k];
    const double sk = sigma[src];
    out.s[k] = sk;
    if (sk > 0.0) {
      for (std::size_t r = 0; r < len; ++r) out.u.at(r, k) = w[src][r] / sk;
    }
    for (std::size_t r = 0; r < n; ++r) out.v.at(r, k) = v[src][r];
  }
  return out;
}

}  // namespace

Svd jacobi_svd(const Tensor& a, const SvdOptions& opts) {
  require_matrix(a, "jacobi_svd");
  if (!a.all_finite()) throw NumericError("jacobi_svd: input has non-finite entries");
  const std::size_t m = a.rows(), n = a.cols();
  if (m >= n) {
    std::vector<std::vector<double>> cols(n, std::vector<double>(m));
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) cols[c][r] = a.at(r, c);
    }
    return jacobi_tall(std::move(cols), m, opts);
  }
  // Wide: decompose a^T, whose columns are the rows of a.
  std::vector<std::vector<double>> cols(m);
  for (std::size_t r = 0; r < m; ++r) cols[r].assign(a.row(r).begin(), a.row(r).end());
  Svd t = jacobi_tall(std::move(cols), n, opts);
  std::swap(t.u, t.v);
  return t;
}

Tensor reconstruct(const Svd& svd) {
  Tensor us = svd.u;
  for (std::size_t r = 0; r < us.rows(); ++r) {
    for (std::size_t k = 0; k < us.cols(); ++k) us.at(r, k) *= svd.s[k];
  }
  return matmul_nt_values(us, svd.v);
}

Tensor pca_project(const Tensor& x, std::size_t components) {
  require_matrix(x, "pca_project");
  const std::size_t n = x.rows(), d = x.cols();
  if (components == 0 || components > std::min(n, d)) {
    throw ConfigError("pca_project: cannot extract " + std::to_string(components) +
                      " components from " + shape_string(x.shape()));
  }
  Tensor centered = x;
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += x.at(r, c);
    mean /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r) centered.at(r, c) -= mean;
  }
  const Svd svd = jacobi_svd(centered);
  Tensor out({n, components});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < components; ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += centered.at(r, c) * svd.v.at(c, k);
      out.at(r, k) = s;
    }
  }
  return out;
}

}  // namespace sfbd
