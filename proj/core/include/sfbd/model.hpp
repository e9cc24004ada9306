#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sfbd/adapters.hpp"
#include "sfbd/losses.hpp"
#include "sfbd/nn.hpp"

namespace sfbd {

struct ModelConfig {
  std::size_t pooled_width = 64;
  std::size_t hidden = 32;
  std::size_t img_tokens = 8;
  std::size_t img_dim = 16;
  std::size_t txt_tokens = 4;
  std::size_t txt_dim = 16;
  std::size_t translator_blocks = 2;
  PeftConfig peft;

  std::size_t img_width() const { return img_tokens * img_dim; }
  std::size_t txt_width() const { return txt_tokens * txt_dim; }
  void validate() const;

  static ModelConfig desk();
  // 8192 -> 2048 -> 2048 -> 257x768 / 77x768.
  static ModelConfig paper();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { embedder, translator, head_base, adapter };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group;
  std::size_t numel() const { return shape_numel(shape); }
};

/// Every parameter a model built from `cfg` owns, without allocating it.
std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg);

struct ParamCount {
  std::size_t trainable = 0;
  std::size_t total = 0;
  double fraction = 0.0;  // trainable / full fine-tuning parameter count
};

/// Trainable share under the adaptation policy: embedder and translator
/// train, head bases freeze, adapter parameters train. `total` is the
/// parameter count of the unwrapped model.
ParamCount trainable_param_count(const ModelConfig& cfg, const PeftConfig& peft);

struct NamedParam {
  std::string name;
  Tensor* value;
  bool trainable;
};

struct ForwardOutputs {
  Var embedding;   // embedder output, B x h
  Var branch_img;  // translator image branch, B x h
  Var branch_txt;  // translator text branch, B x h
  Var pred_img;    // unit rows, B x img_width
  Var pred_txt;    // unit rows, B x txt_width
};

/// Embedder -> translator (shared trunk, two branches) -> image/text heads.
class BrainDecoder {
 public:
  BrainDecoder() = default;
  static BrainDecoder init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  // Wraps both heads with adapters; cfg.peft is updated accordingly.
  void apply_peft(const PeftConfig& peft, Rng& rng);
  void set_trainability(Phase phase);

  ForwardOutputs forward(ParamBinder& binder, const Tensor& voxels) const;
  // Gradient-free convenience: returns (pred_img, pred_txt).
  std::pair<Tensor, Tensor> predict(const Tensor& voxels) const;

  std::vector<NamedParam> parameters();
  std::vector<std::pair<std::string, const Tensor*>> parameters() const;
  ParamCount count_parameters() const;

  const Head& image_head() const { return image_head_; }
  const Head& text_head() const { return text_head_; }

 private:
  template <typename Self, typename F>
  static void visit_all(Self& self, F& f);

  ModelConfig cfg_;
  MlpBlock embedder_;
  std::vector<MlpBlock> translator_;
  LinearLayer branch_img_;
  LinearLayer branch_txt_;
  Head image_head_;
  Head text_head_;
};

}  // namespace sfbd
