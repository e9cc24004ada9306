#include "sfbd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "sfbd/error.hpp"

namespace sfbd {

void require_unit_rows(const Tensor& t, const char* what, double tol) {
  require_matrix(t, what);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0.0;
    for (double v : t.row(i)) s += v * v;
    if (std::abs(std::sqrt(s) - 1.0) > tol) {
      throw PreconditionError(std::string(what) + ": row " + std::to_string(i) +
                              " is not unit-norm (norm " + std::to_string(std::sqrt(s)) + ")");
    }
  }
}

namespace {

Tensor teacher_softmax(const Tensor& target, double temperature) {
  Tensor sim = matmul_nt_values(target, target);
  const std::size_t n = sim.rows();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = sim.row(i);
    const double mx = *std::max_element(r.begin(), r.end()) / temperature;
    double z = 0.0;
    for (auto& v : r) {
      v = std::exp(v / temperature - mx);
      z += v;
    }
    for (auto& v : r) v /= z;
  }
  return sim;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

}  // namespace

Var softclip_loss(const Var& pred, const Var& target, const SoftClipConfig& cfg) {
  if (!(cfg.temperature > 0.0)) {
    throw ConfigError("softclip temperature must be positive, got " + std::to_string(cfg.temperature));
  }
  require_unit_rows(pred.value(), "softclip_loss pred");
  require_unit_rows(target.value(), "softclip_loss target");
  if (pred.shape() != target.shape()) {
    throw ShapeError("softclip_loss: pred " + shape_string(pred.shape()) + " vs target " +
                     shape_string(target.shape()));
  }
  Tape& tape = pred.tape();
  Var teacher = tape.constant(teacher_softmax(target.value(), cfg.temperature), "softclip.teacher");
  Var logits = ad::matmul(pred, ad::transpose(target));
  Var row_term = ad::scale(ad::sum(ad::mul(teacher, ad::log_softmax_rows(logits, cfg.temperature))), -1.0);
  if (!cfg.bidirectional) return row_term;
  Var col_log_q = ad::transpose(ad::log_softmax_rows(ad::transpose(logits), cfg.temperature));
  Var col_term = ad::scale(ad::sum(ad::mul(teacher, col_log_q)), -1.0);
  return ad::scale(ad::add(row_term, col_term), 0.5);
}

double median_pairwise_distance(const Tensor& x, const Tensor& y) {
  std::vector<std::span<const double>> rows;
  for (std::size_t i = 0; i < x.rows(); ++i) rows.push_back(x.row(i));
  for (std::size_t i = 0; i < y.rows(); ++i) rows.push_back(y.row(i));
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back(std::sqrt(squared_distance(rows[i], rows[j])));
  }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double med = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  return med > 0.0 ? med : 1.0;
}

std::vector<double> resolve_bandwidths(const Tensor& x, const Tensor& y, const MmdConfig& cfg) {
  if (cfg.bandwidths.empty()) throw ConfigError("mmd: at least one bandwidth is required");
  for (double b : cfg.bandwidths) {
    if (!(b > 0.0)) throw ConfigError("mmd: bandwidths must be positive");
  }
  if (!cfg.median_heuristic) return cfg.bandwidths;
  const double med = median_pairwise_distance(x, y);
  std::vector<double> out;
  for (double b : cfg.bandwidths) out.push_back(b * med);
  return out;
}

namespace {

void check_mmd_shapes(const Tensor& x, const Tensor& y) {
  require_matrix(x, "mmd_loss");
  require_matrix(y, "mmd_loss");
  if (x.cols() != y.cols()) {
    throw ShapeError("mmd_loss: feature widths differ, " + shape_string(x.shape()) + " vs " +
                     shape_string(y.shape()));
  }
}

double mmd_with(const Tensor& x, const Tensor& y, const std::vector<double>& sigmas) {
  const std::size_t n = x.rows(), m = y.rows();
  double total = 0.0;
  for (double s : sigmas) {
    const double inv = 1.0 / (2.0 * s * s);
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) kxx += std::exp(-squared_distance(x.row(i), x.row(j)) * inv);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) kyy += std::exp(-squared_distance(y.row(i), y.row(j)) * inv);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) kxy += std::exp(-squared_distance(x.row(i), y.row(j)) * inv);
    }
    const double nn = static_cast<double>(n), mm = static_cast<double>(m);
    total += kxx / (nn * nn) + kyy / (mm * mm) - 2.0 * kxy / (nn * mm);
  }
  // Rounding can push an exact zero slightly negative.
  return std::max(total, 0.0);
}

// d/da of sum_b w * k(a, b) for rows of `a` against rows of `b`, accumulated into `out`.
void accumulate_kernel_grad(const Tensor& a, const Tensor& b, double sigma, double weight, Tensor& out) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const std::size_t d = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ai = a.row(i);
    auto oi = out.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto bj = b.row(j);
      const double k = std::exp(-squared_distance(ai, bj) * inv);
      const double c = weight * k * (-2.0 * inv);
      for (std::size_t t = 0; t < d; ++t) oi[t] += c * (ai[t] - bj[t]);
    }
  }
}

}  // namespace

double mmd_value(const Tensor& x, const Tensor& y, const MmdConfig& cfg) {
  check_mmd_shapes(x, y);
  return mmd_with(x, y, resolve_bandwidths(x, y, cfg));
}

Var mmd_loss(const Var& x, const Var& y, const MmdConfig& cfg) {
  check_mmd_shapes(x.value(), y.value());
  auto sigmas = std::make_shared<std::vector<double>>(resolve_bandwidths(x.value(), y.value(), cfg));
  const double value = mmd_with(x.value(), y.value(), *sigmas);
  return x.tape().record(
      Op::custom, Tensor::scalar(value), {x, y},
      [x, y, sigmas](const Tensor& g) {
        const Tensor& xv = x.value();
        const Tensor& yv = y.value();
        const double nn = static_cast<double>(xv.rows()), mm = static_cast<double>(yv.rows());
        const double go = g.item();
        Tensor gx(xv.shape(), 0.0), gy(yv.shape(), 0.0);
        for (double s : *sigmas) {
          // Each k(x_i, x_j) appears twice in the double sum, hence the factor 2.
          accumulate_kernel_grad(xv, xv, s, go * 2.0 / (nn * nn), gx);
          accumulate_kernel_grad(xv, yv, s, -go * 2.0 / (nn * mm), gx);
          accumulate_kernel_grad(yv, yv, s, go * 2.0 / (mm * mm), gy);
          accumulate_kernel_grad(yv, xv, s, -go * 2.0 / (nn * mm), gy);
        }
        return std::vector<Tensor>{std::move(gx), std::move(gy)};
      },
      "mmd");
}

namespace {

Var sum_normalize(const Var& v) {
  double total = 0.0;
  for (double s : v.value().data()) total += s;
  if (!(total > 0.0)) throw NumericError("spectrum normalization: spectrum sums to zero");
  Tensor out = v.value();
  for (auto& s : out.data()) s /= total;
  auto y = std::make_shared<Tensor>(out);
  return v.tape().record(
      Op::custom, std::move(out), {v},
      [y, total](const Tensor& g) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * (*y)[i];
        Tensor gi = g;
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] = (g[i] - dot) / total;
        return std::vector<Tensor>{std::move(gi)};
      },
      "sum_normalize");
}

}  // namespace

Var unified_spectrum(const Var& img, const Var& txt, SpectrumNorm norm) {
  require_unit_rows(img.value(), "unified_spectrum image");
  require_unit_rows(txt.value(), "unified_spectrum text");
  Var spectrum = ad::svd_spectrum(ad::concat_cols(img, txt));
  const std::size_t k = spectrum.value().size();
  if (norm == SpectrumNorm::sum) return sum_normalize(spectrum);
  return ad::reshape(ad::row_l2_normalize(ad::reshape(spectrum, {1, k})), {k});
}

Var wd_spectrum_loss(const Var& pred, const Var& target, const WdConfig& cfg) {
  if (!(cfg.order >= 1.0)) throw ConfigError("wasserstein order must be >= 1");
  const std::size_t k = pred.value().size();
  if (target.value().size() != k) {
    throw ShapeError("wd_spectrum_loss: lengths differ, " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  auto descending = [](const Tensor& t) {
    std::vector<std::size_t> idx(t.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return t[a] > t[b]; });
    return idx;
  };
  auto pi = std::make_shared<std::vector<std::size_t>>(descending(pred.value()));
  auto ti = std::make_shared<std::vector<std::size_t>>(descending(target.value()));
  auto diff = std::make_shared<std::vector<double>>(k);
  const double p = cfg.order;
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    (*diff)[i] = pred.value()[(*pi)[i]] - target.value()[(*ti)[i]];
    acc += std::pow(std::abs((*diff)[i]), p);
  }
  const double kk = static_cast<double>(k);
  const double w = std::pow(acc / kk, 1.0 / p);
  const Shape ps = pred.shape(), ts = target.shape();
  return pred.tape().record(
      Op::custom, Tensor::scalar(w), {pred, target},
      [pi, ti, diff, w, p, kk, ps, ts](const Tensor& g) {
        Tensor gp(ps, 0.0), gt(ts, 0.0);
        if (w == 0.0) return std::vector<Tensor>{std::move(gp), std::move(gt)};
        for (std::size_t i = 0; i < diff->size(); ++i) {
          const double d = (*diff)[i];
          const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          const double local = p == 1.0 ? sgn / kk
                                        : std::pow(w, 1.0 - p) * std::pow(std::abs(d), p - 1.0) * sgn / kk;
          gp[(*pi)[i]] += g.item() * local;
          gt[(*ti)[i]] -= g.item() * local;
        }
        return std::vector<Tensor>{std::move(gp), std::move(gt)};
      },
      "wd_spectrum");
}

LossTerms image_text_losses(const Var& pred_img, const Var& clip_img, const Var& pred_txt,
                            const Var& clip_txt, const AlignConfig& cfg) {
  LossTerms t;
  auto modality = [&](const Var& pred, const Var& clip, double& sc_out, double& mmd_out) {
    Var sc = ad::scale(softclip_loss(pred, clip, cfg.softclip), cfg.weights.softclip);
    sc_out = sc.value().item();
    if (cfg.weights.mmd == 0.0) {
      mmd_out = 0.0;
      return sc;
    }
    Var mmd = ad::scale(mmd_loss(pred, clip, cfg.mmd), cfg.weights.mmd);
    mmd_out = mmd.value().item();
    return ad::add(sc, mmd);
  };
  t.image = modality(pred_img, clip_img, t.report.l_softclip_image, t.report.l_mmd_image);
  t.text = modality(pred_txt, clip_txt, t.report.l_softclip_text, t.report.l_mmd_text);
  t.report.l_image = t.image.value().item();
  t.report.l_text = t.text.value().item();
  t.total = ad::add(t.image, t.text);
  t.report.total = t.total.value().item();
  return t;
}

double source_loss(const LossReport& report) { return report.l_image + report.l_text; }

double adaptation_loss(const LossReport& report) {
  if (!report.l_wd) throw ConfigError("adaptation loss requires the Wasserstein term");
  return report.l_image + report.l_text + *report.l_wd;
}

LossTerms phase_losses(Phase phase, const Var& pred_img, const Var& clip_img, const Var& pred_txt,
                       const Var& clip_txt, const AlignConfig& cfg) {
  LossTerms t = image_text_losses(pred_img, clip_img, pred_txt, clip_txt, cfg);
  if (phase == Phase::source) return t;
  if (cfg.weights.wd == 0.0) {
    t.report.l_wd = 0.0;
    return t;
  }
  Var pred_spec = unified_spectrum(pred_img, pred_txt, cfg.spectrum_norm);
  Var clip_spec = unified_spectrum(clip_img, clip_txt, cfg.spectrum_norm);
  Var wd = ad::scale(wd_spectrum_loss(pred_spec, clip_spec, cfg.wd), cfg.weights.wd);
  t.wd = wd;
  t.report.l_wd = wd.value().item();
  t.total = ad::add(t.total, wd);
  t.report.total = t.total.value().item();
  return t;
}

}  // namespace sfbd
