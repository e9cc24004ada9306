#include "sfbd/model.hpp"

#include "sfbd/error.hpp"

namespace sfbd {

void ModelConfig::validate() const {
  if (pooled_width == 0 || hidden == 0 || img_tokens == 0 || img_dim == 0 || txt_tokens == 0 ||
      txt_dim == 0) {
    throw ConfigError("model config: all widths must be positive");
  }
  if (peft.kind != PeftKind::none && peft.rank == 0) throw ConfigError("model config: adapter rank must be >= 1");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.pooled_width = 8192;
  c.hidden = 2048;
  c.img_tokens = 257;
  c.img_dim = 768;
  c.txt_tokens = 77;
  c.txt_dim = 768;
  return c;
}

namespace {

// Visits every parameter in a fixed order. `f(name, tensor, trainable, group)`.
template <typename Self, typename F>
void visit_linear(Self& layer, const std::string& prefix, ParamGroup group, F& f) {
  f(prefix + ".weight", layer.weight, layer.trainable, group);
  f(prefix + ".bias", layer.bias, layer.trainable, group);
}

template <typename Self, typename F>
void visit_block(Self& block, const std::string& prefix, ParamGroup group, F& f) {
  visit_linear(block.linear, prefix + ".linear", group, f);
  f(prefix + ".norm.gamma", block.norm.gamma, block.norm.trainable, group);
  f(prefix + ".norm.beta", block.norm.beta, block.norm.trainable, group);
}

template <typename HeadT, typename F>
void visit_head(HeadT& head, const std::string& prefix, F& f) {
  std::visit(
      [&](auto& h) {
        using T = std::decay_t<decltype(h)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          visit_linear(h, prefix, ParamGroup::head_base, f);
        } else if constexpr (std::is_same_v<T, LoraLinear>) {
          visit_linear(h.base, prefix, ParamGroup::head_base, f);
          f(prefix + ".lora_a", h.a, true, ParamGroup::adapter);
          f(prefix + ".lora_b", h.b, true, ParamGroup::adapter);
        } else {
          visit_linear(h.base, prefix, ParamGroup::head_base, f);
          f(prefix + ".dora_a", h.a, true, ParamGroup::adapter);
          f(prefix + ".dora_b", h.b, true, ParamGroup::adapter);
          f(prefix + ".dora_m", h.magnitude, true, ParamGroup::adapter);
        }
      },
      head);
}

void add_linear_spec(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in,
                     std::size_t outw, ParamGroup group) {
  out.push_back({prefix + ".weight", {outw, in}, group});
  out.push_back({prefix + ".bias", {outw}, group});
}

void add_block_spec(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in,
                    std::size_t outw, ParamGroup group) {
  add_linear_spec(out, prefix + ".linear", in, outw, group);
  out.push_back({prefix + ".norm.gamma", {outw}, group});
  out.push_back({prefix + ".norm.beta", {outw}, group});
}

void add_head_spec(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in,
                   std::size_t outw, const PeftConfig& peft) {
  add_linear_spec(out, prefix, in, outw, ParamGroup::head_base);
  const std::size_t r = peft.rank;
  switch (peft.kind) {
    case PeftKind::none: break;
    case PeftKind::lora:
      out.push_back({prefix + ".lora_a", {r, in}, ParamGroup::adapter});
      out.push_back({prefix + ".lora_b", {outw, r}, ParamGroup::adapter});
      break;
    case PeftKind::dora:
      out.push_back({prefix + ".dora_a", {r, in}, ParamGroup::adapter});
      out.push_back({prefix + ".dora_b", {outw, r}, ParamGroup::adapter});
      out.push_back({prefix + ".dora_m", {1, in}, ParamGroup::adapter});
      break;
  }
}

}  // namespace

std::vector<ParamSpec> parameter_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> out;
  add_block_spec(out, "embedder", cfg.pooled_width, cfg.hidden, ParamGroup::embedder);
  for (std::size_t i = 0; i < cfg.translator_blocks; ++i) {
    add_block_spec(out, "translator." + std::to_string(i), cfg.hidden, cfg.hidden, ParamGroup::translator);
  }
  add_linear_spec(out, "branch_img", cfg.hidden, cfg.hidden, ParamGroup::translator);
  add_linear_spec(out, "branch_txt", cfg.hidden, cfg.hidden, ParamGroup::translator);
  add_head_spec(out, "image_head", cfg.hidden, cfg.img_width(), cfg.peft);
  add_head_spec(out, "text_head", cfg.hidden, cfg.txt_width(), cfg.peft);
  return out;
}

ParamCount trainable_param_count(const ModelConfig& cfg, const PeftConfig& peft) {
  ModelConfig full = cfg;
  full.peft = PeftConfig{};
  ParamCount c;
  for (const auto& p : parameter_layout(full)) {
    c.total += p.numel();
    if (peft.kind == PeftKind::none || p.group != ParamGroup::head_base) c.trainable += p.numel();
  }
  c.trainable += adapter_param_count(cfg.hidden, cfg.img_width(), peft);
  c.trainable += adapter_param_count(cfg.hidden, cfg.txt_width(), peft);
  c.fraction = static_cast<double>(c.trainable) / static_cast<double>(c.total);
  return c;
}

BrainDecoder BrainDecoder::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  BrainDecoder m;
  m.cfg_ = cfg;
  m.cfg_.peft = PeftConfig{};
  m.embedder_ = MlpBlock::init(cfg.pooled_width, cfg.hidden, false, rng);
  for (std::size_t i = 0; i < cfg.translator_blocks; ++i) {
    m.translator_.push_back(MlpBlock::init(cfg.hidden, cfg.hidden, true, rng));
  }
  m.branch_img_ = LinearLayer::init(cfg.hidden, cfg.hidden, rng);
  m.branch_txt_ = LinearLayer::init(cfg.hidden, cfg.hidden, rng);
  m.image_head_ = LinearLayer::init(cfg.hidden, cfg.img_width(), rng);
  m.text_head_ = LinearLayer::init(cfg.hidden, cfg.txt_width(), rng);
  if (cfg.peft.kind != PeftKind::none) m.apply_peft(cfg.peft, rng);
  return m;
}

void BrainDecoder::apply_peft(const PeftConfig& peft, Rng& rng) {
  if (cfg_.peft.kind != PeftKind::none) throw ConfigError("model heads are already adapter-wrapped");
  image_head_ = wrap_head(head_base(image_head_), peft, rng);
  text_head_ = wrap_head(head_base(text_head_), peft, rng);
  cfg_.peft = peft;
}

void BrainDecoder::set_trainability(Phase phase) {
  embedder_.set_trainable(true);
  for (auto& b : translator_) b.set_trainable(true);
  branch_img_.trainable = true;
  branch_txt_.trainable = true;
  const bool freeze_heads = phase == Phase::adaptation && cfg_.peft.kind != PeftKind::none;
  for (Head* h : {&image_head_, &text_head_}) {
    std::visit(
        [&](auto& layer) {
          using T = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<T, LinearLayer>) {
            layer.trainable = !freeze_heads;
          } else {
            layer.base.trainable = !freeze_heads;
          }
        },
        *h);
  }
}

ForwardOutputs BrainDecoder::forward(ParamBinder& binder, const Tensor& voxels) const {
  require_matrix(voxels, "BrainDecoder::forward");
  if (voxels.cols() < cfg_.pooled_width) {
    throw ConfigError("forward: subject has " + std::to_string(voxels.cols()) +
                      " voxels, fewer than the pooled width " + std::to_string(cfg_.pooled_width));
  }
  Tape& tape = binder.tape();
  ForwardOutputs out;
  Var pooled = adaptive_max_pool_1d(tape.constant(voxels, "voxels"), cfg_.pooled_width);
  out.embedding = mlp_block_forward(binder, embedder_, pooled);
  Var trunk = out.embedding;
  for (const auto& block : translator_) trunk = mlp_block_forward(binder, block, trunk);
  out.branch_img = linear_forward(binder, branch_img_, trunk);
  out.branch_txt = linear_forward(binder, branch_txt_, trunk);
  out.pred_img = ad::row_l2_normalize(head_forward(binder, image_head_, out.branch_img));
  out.pred_txt = ad::row_l2_normalize(head_forward(binder, text_head_, out.branch_txt));
  return out;
}

std::pair<Tensor, Tensor> BrainDecoder::predict(const Tensor& voxels) const {
  Tape tape;
  ParamBinder binder(tape, false);
  ForwardOutputs out = forward(binder, voxels);
  return {out.pred_img.value(), out.pred_txt.value()};
}

template <typename Self, typename F>
void BrainDecoder::visit_all(Self& self, F& f) {
  visit_block(self.embedder_, "embedder", ParamGroup::embedder, f);
  for (std::size_t i = 0; i < self.translator_.size(); ++i) {
    visit_block(self.translator_[i], "translator." + std::to_string(i), ParamGroup::translator, f);
  }
  visit_linear(self.branch_img_, "branch_img", ParamGroup::translator, f);
  visit_linear(self.branch_txt_, "branch_txt", ParamGroup::translator, f);
  visit_head(self.image_head_, "image_head", f);
  visit_head(self.text_head_, "text_head", f);
}

std::vector<NamedParam> BrainDecoder::parameters() {
  std::vector<NamedParam> out;
  auto f = [&](const std::string& name, Tensor& t, bool trainable, ParamGroup) {
    out.push_back({name, &t, trainable});
  };
  visit_all(*this, f);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> BrainDecoder::parameters() const {
  std::vector<std::pair<std::string, const Tensor*>> out;
  auto f = [&](const std::string& name, const Tensor& t, bool, ParamGroup) { out.emplace_back(name, &t); };
  visit_all(*this, f);
  return out;
}

ParamCount BrainDecoder::count_parameters() const {
  ParamCount c;
  auto f = [&](const std::string&, const Tensor& t, bool trainable, ParamGroup group) {
    if (group != ParamGroup::adapter) c.total += t.size();
    if (trainable) c.trainable += t.size();
  };
  visit_all(*this, f);
  c.fraction = static_cast<double>(c.trainable) / static_cast<double>(c.total);
  return c;
}

}  // namespace sfbd
