#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sfbd/autodiff.hpp"

namespace sfbd {

struct SoftClipConfig {
  double temperature = 0.125;
  // Average the row-wise loss with its column-wise counterpart.
  bool bidirectional = false;
};

/// RBF MMD. With `median_heuristic` the bandwidths are multipliers of the
/// median pairwise distance of the pooled sample; otherwise they are absolute.
/// The resolved bandwidths are constants with respect to differentiation.
struct MmdConfig {
  bool median_heuristic = true;
  std::vector<double> bandwidths{1.0};
};

enum class SpectrumNorm : std::uint8_t { l2, sum };

struct WdConfig {
  double order = 1.0;  // Wasserstein p
};

struct LossWeights {
  double softclip = 1.0;
  double mmd = 1.0;
  double wd = 1.0;
};

struct AlignConfig {
  SoftClipConfig softclip;
  MmdConfig mmd;
  WdConfig wd;
  SpectrumNorm spectrum_norm = SpectrumNorm::l2;
  LossWeights weights;
};

// Rows of `t` must have unit L2 norm within `tol`.
void require_unit_rows(const Tensor& t, const char* what, double tol = 1e-6);

/// Soft cross-entropy between the teacher softmax of target similarities and
/// the student softmax of pred-target similarities, summed over the batch.
/// The teacher distribution carries no gradient.
Var softclip_loss(const Var& pred, const Var& target, const SoftClipConfig& cfg);

double median_pairwise_distance(const Tensor& x, const Tensor& y);
std::vector<double> resolve_bandwidths(const Tensor& x, const Tensor& y, const MmdConfig& cfg);

/// Biased (V-statistic) squared MMD summed over bandwidths.
Var mmd_loss(const Var& x, const Var& y, const MmdConfig& cfg);
double mmd_value(const Tensor& x, const Tensor& y, const MmdConfig& cfg);

/// Concatenate along features, take the singular values of the batch matrix
/// and normalize them.
Var unified_spectrum(const Var& img, const Var& txt, SpectrumNorm norm = SpectrumNorm::l2);

/// 1-D Wasserstein distance between two equal-size empirical distributions,
/// evaluated by matching order statistics.
Var wd_spectrum_loss(const Var& pred, const Var& target, const WdConfig& cfg = {});

enum class Phase : std::uint8_t { source, adaptation };

struct LossReport {
  double l_softclip_image = 0.0;
  double l_mmd_image = 0.0;
  double l_softclip_text = 0.0;
  double l_mmd_text = 0.0;
  double l_image = 0.0;
  double l_text = 0.0;
  std::optional<double> l_wd;
  double total = 0.0;
};

/// Tape handles for every loss term of one batch.
struct LossTerms {
  Var image;
  Var text;
  std::optional<Var> wd;
  Var total;
  LossReport report;
};

/// L_image = softclip + mmd on the image pair, L_text likewise on the text pair.
LossTerms image_text_losses(const Var& pred_img, const Var& clip_img, const Var& pred_txt,
                            const Var& clip_txt, const AlignConfig& cfg);

// L_SRC = L_image + L_text.
double source_loss(const LossReport& report);
// L_ADP = L_image + L_text + L_WD.
double adaptation_loss(const LossReport& report);

/// Full per-batch objective for a phase. The adaptation phase adds the
/// Wasserstein distance between the normalized unified spectra.
LossTerms phase_losses(Phase phase, const Var& pred_img, const Var& clip_img, const Var& pred_txt,
                       const Var& clip_txt, const AlignConfig& cfg);

}  // namespace sfbd
