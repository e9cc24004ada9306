#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sfbd/checkpoint.hpp"
#include "sfbd/dataio.hpp"
#include "sfbd/losses.hpp"
#include "sfbd/model.hpp"
#include "sfbd/optim.hpp"

namespace sfbd {

struct RunConfig {
  Phase phase = Phase::source;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double max_lr = 3e-3;
  std::uint64_t seed = 7;
  AlignConfig losses;
  ModelConfig model = ModelConfig::desk();
  PeftConfig peft{PeftKind::dora, 8};  // applied to the heads when adapting
  AdamWConfig optimizer;
  double holdout_fraction = 0.2;
  std::size_t distractors = 100;
  bool eval_each_epoch = true;

  // Desk-scale defaults; source trains 50 epochs, adaptation 20.
  static RunConfig desk(Phase phase);
  // Paper-scale settings: 600 / 200 epochs, batch 50, max lr 1.5e-4.
  static RunConfig paper(Phase phase);
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l_image = 0.0;
  double l_text = 0.0;
  double l_wd = 0.0;
  double total = 0.0;
  double acc_img = 0.0;
  double acc_txt = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct EvalReport {
  std::size_t samples = 0;
  // Forward: prediction vs. true target against a distractor target.
  // Backward: target vs. true prediction against a distractor prediction.
  double acc_img = 0.0;
  double acc_txt = 0.0;
  double acc_img_bwd = 0.0;
  double acc_txt_bwd = 0.0;
  double mmd_img = 0.0;
  double mmd_txt = 0.0;
  double wd_spectrum = 0.0;
  std::vector<EpochRecord> curve;
};

struct RunResult {
  Checkpoint checkpoint;
  EvalReport report;
};

struct BatchLog {
  std::size_t epoch;
  std::size_t batch;
  LossReport losses;
};
using BatchObserver = std::function<void(const BatchLog&)>;

struct SplitData {
  SubjectData train;
  SubjectData test;
};

/// Held-out split: the last `holdout_fraction` of each subject's samples.
SplitData split_subject(const SubjectData& subject, double holdout_fraction);

struct EvalOptions {
  std::size_t distractors = 100;
  std::uint64_t seed = 7;
  MmdConfig mmd;
  SpectrumNorm spectrum_norm = SpectrumNorm::l2;
};

/// Fraction of (i, distractor) draws where cos(query_i, key_i) > cos(query_i, key_j).
double two_way_identification(const Tensor& query, const Tensor& key, std::size_t distractors, Rng& rng);

EvalReport evaluate(const BrainDecoder& model, const SubjectData& data, const EvalOptions& opts);

/// Minimizes L_image + L_text over shuffled batches mixing all source subjects.
RunResult train_source(const RunConfig& cfg, std::span<const SubjectData> subjects,
                       const BatchObserver& observer = {});

/// Source-free adaptation on a single target subject. Only the source model
/// is consumed; heads are wrapped per cfg.peft and the objective adds the
/// spectrum Wasserstein term.
RunResult adapt_target(const RunConfig& cfg, const Checkpoint& source, const SubjectData& target,
                       const BatchObserver& observer = {});

/// Zero-shot report of the source model on the target's held-out split.
EvalReport zero_shot(const RunConfig& cfg, const Checkpoint& source, const SubjectData& target);

/// Writes <dir>/features.csv (subject,dim0..) with translator image-branch
/// embeddings and <dir>/pca.csv (subject,pc0,pc1).
void export_features(const BrainDecoder& model, std::span<const SubjectData> data, const fs::path& dir);

// epoch,l_image,l_text,l_wd,total,acc_img,acc_txt
void write_metrics_csv(const fs::path& path, const std::vector<EpochRecord>& curve);

}  // namespace sfbd
