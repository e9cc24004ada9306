#include "sfbd/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "sfbd/error.hpp"

namespace sfbd {

RunConfig RunConfig::desk(Phase phase) {
  RunConfig c;
  c.phase = phase;
  c.epochs = phase == Phase::source ? 50 : 20;
  return c;
}

RunConfig RunConfig::paper(Phase phase) {
  RunConfig c;
  c.phase = phase;
  c.epochs = phase == Phase::source ? 600 : 200;
  c.batch_size = 50;
  c.max_lr = 1.5e-4;
  c.model = ModelConfig::paper();
  return c;
}

void RunConfig::validate() const {
  if (batch_size < 2) throw ConfigError("run config: batch size must be at least 2");
  if (!(max_lr > 0.0)) throw ConfigError("run config: max lr must be positive");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("run config: holdout fraction must lie in (0, 1)");
  }
  if (distractors == 0) throw ConfigError("run config: need at least one distractor draw");
  model.validate();
  if (peft.kind != PeftKind::none && peft.rank == 0) throw ConfigError("run config: adapter rank must be >= 1");
}

namespace {

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ConfigError("no data to concatenate");
  const std::size_t cols = parts.front().cols();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: widths differ");
    data.insert(data.end(), p.data().begin(), p.data().end());
    rows += p.rows();
  }
  return Tensor({rows, cols}, std::move(data));
}

SubjectData pooled_union(std::span<const SubjectData> subjects, std::size_t pooled_width, const std::string& name) {
  std::vector<Tensor> fmri, img, txt;
  for (const auto& s : subjects) {
    fmri.push_back(adaptive_max_pool_1d(s.fmri, pooled_width));
    img.push_back(s.img);
    txt.push_back(s.txt);
  }
  return SubjectData{name, concat_rows(fmri), concat_rows(img), concat_rows(txt)};
}

EvalOptions eval_options(const RunConfig& cfg) {
  return EvalOptions{cfg.distractors, cfg.seed, cfg.losses.mmd, cfg.losses.spectrum_norm};
}

struct Trainer {
  const RunConfig& cfg;
  Phase phase;
  BrainDecoder& model;
  AdamW& optimizer;
  const BatchObserver& observer;

  void run(const SubjectData& train, const SubjectData& held_out, Rng& rng, EvalReport& report) {
    const std::size_t n = train.samples();
    if (n < 2) throw ConfigError("training split needs at least 2 samples");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    const std::size_t full = n / cfg.batch_size;
    const std::size_t tail = n % cfg.batch_size;
    const std::size_t batches = full + (tail >= 2 ? 1 : 0);
    LrSchedule schedule{cfg.max_lr, std::max<std::size_t>(1, cfg.epochs * batches)};
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      EpochRecord rec;
      rec.epoch = epoch;
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t begin = b * cfg.batch_size;
        const std::size_t end = std::min(n, begin + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + begin, end - begin);
        const LossReport losses = train_step(train, idx, lr_at(schedule, step++), epoch, b);
        rec.l_image += losses.l_image;
        rec.l_text += losses.l_text;
        rec.l_wd += losses.l_wd.value_or(0.0);
        rec.total += losses.total;
      }
      const double nb = static_cast<double>(batches);
      rec.l_image /= nb;
      rec.l_text /= nb;
      rec.l_wd /= nb;
      rec.total /= nb;
      if (cfg.eval_each_epoch) {
        const EvalReport r = evaluate(model, held_out, eval_options(cfg));
        rec.acc_img = r.acc_img;
        rec.acc_txt = r.acc_txt;
      }
      report.curve.push_back(rec);
    }
  }

  LossReport train_step(const SubjectData& train, std::span<const std::size_t> idx, double lr, std::size_t epoch,
                        std::size_t batch) {
    Tape tape;
    ParamBinder binder(tape);
    const ForwardOutputs out = model.forward(binder, train.fmri.gather_rows(idx));
    Var clip_img = tape.constant(train.img.gather_rows(idx), "clip_img");
    Var clip_txt = tape.constant(train.txt.gather_rows(idx), "clip_txt");
    LossTerms terms;
    try {
      terms = phase_losses(phase, out.pred_img, clip_img, out.pred_txt, clip_txt, cfg.losses);
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + ": " + e.what());
    }
    if (!std::isfinite(terms.report.total)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch));
    }
    const GradMap grads = tape.backward(terms.total);

    std::vector<Tensor> grad_store;
    std::vector<ParamSlot> slots;
    auto params = model.parameters();
    grad_store.reserve(params.size());
    for (auto& p : params) {
      if (!p.trainable) continue;
      auto v = binder.find(*p.value);
      grad_store.push_back(v ? grads.of(*v) : Tensor(p.value->shape(), 0.0));
    }
    std::size_t g = 0;
    for (auto& p : params) {
      if (!p.trainable) continue;
      slots.push_back(ParamSlot{p.name, p.value, &grad_store[g++]});
    }
    optimizer.step(slots, lr);
    if (observer) observer(BatchLog{epoch, batch, terms.report});
    return terms.report;
  }
};

}  // namespace

SplitData split_subject(const SubjectData& subject, double holdout_fraction) {
  subject.validate();
  const std::size_t n = subject.samples();
  const auto test = static_cast<std::size_t>(std::ceil(holdout_fraction * static_cast<double>(n)));
  if (test < 2 || test >= n) {
    throw ConfigError("subject " + subject.name + ": cannot hold out " + std::to_string(test) + " of " +
                      std::to_string(n) + " samples");
  }
  const std::size_t cut = n - test;
  SplitData s;
  s.train = SubjectData{subject.name, subject.fmri.rows_slice(0, cut), subject.img.rows_slice(0, cut),
                        subject.txt.rows_slice(0, cut)};
  s.test = SubjectData{subject.name, subject.fmri.rows_slice(cut, n), subject.img.rows_slice(cut, n),
                       subject.txt.rows_slice(cut, n)};
  return s;
}

double two_way_identification(const Tensor& query, const Tensor& key, std::size_t distractors, Rng& rng) {
  require_matrix(query, "two_way_identification");
  require_matrix(key, "two_way_identification");
  const std::size_t n = query.rows();
  if (key.rows() != n || key.cols() != query.cols()) throw ShapeError("two_way_identification: shapes differ");
  if (n < 2) throw ConfigError("two-way identification needs at least 2 samples");
  auto cosine = [](std::span<const double> a, std::span<const double> b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
      ab += a[t] * b[t];
      aa += a[t] * a[t];
      bb += b[t] * b[t];
    }
    return ab / std::sqrt(aa * bb);
  };
  std::uniform_int_distribution<std::size_t> pick(0, n - 2);
  std::size_t wins = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double own = cosine(query.row(i), key.row(i));
    for (std::size_t r = 0; r < distractors; ++r) {
      std::size_t j = pick(rng);
      if (j >= i) ++j;
      if (own > cosine(query.row(i), key.row(j))) ++wins;
    }
  }
  return static_cast<double>(wins) / static_cast<double>(n * distractors);
}

EvalReport evaluate(const BrainDecoder& model, const SubjectData& data, const EvalOptions& opts) {
  data.validate();
  if (data.samples() < 2) throw ConfigError("evaluation split needs at least 2 samples");
  const auto [pred_img, pred_txt] = model.predict(data.fmri);
  EvalReport r;
  r.samples = data.samples();
  Rng rng(opts.seed);
  r.acc_img = two_way_identification(pred_img, data.img, opts.distractors, rng);
  r.acc_txt = two_way_identification(pred_txt, data.txt, opts.distractors, rng);
  r.acc_img_bwd = two_way_identification(data.img, pred_img, opts.distractors, rng);
  r.acc_txt_bwd = two_way_identification(data.txt, pred_txt, opts.distractors, rng);
  r.mmd_img = mmd_value(pred_img, data.img, opts.mmd);
  r.mmd_txt = mmd_value(pred_txt, data.txt, opts.mmd);
  Tape tape;
  Var ps = unified_spectrum(tape.constant(pred_img), tape.constant(pred_txt), opts.spectrum_norm);
  Var cs = unified_spectrum(tape.constant(data.img), tape.constant(data.txt), opts.spectrum_norm);
  r.wd_spectrum = wd_spectrum_loss(ps, cs).value().item();
  return r;
}

RunResult train_source(const RunConfig& cfg, std::span<const SubjectData> subjects, const BatchObserver& observer) {
  cfg.validate();
  if (subjects.empty()) throw ConfigError("train_source: need at least one source subject");
  std::vector<SubjectData> train, test;
  for (const auto& s : subjects) {
    SplitData sp = split_subject(s, cfg.holdout_fraction);
    train.push_back(std::move(sp.train));
    test.push_back(std::move(sp.test));
  }
  const SubjectData train_all = pooled_union(train, cfg.model.pooled_width, "source");
  const SubjectData test_all = pooled_union(test, cfg.model.pooled_width, "source");
  if (train_all.img.cols() != cfg.model.img_width() || train_all.txt.cols() != cfg.model.txt_width()) {
    throw ConfigError("train_source: embedding widths do not match the model config");
  }

  ModelConfig mc = cfg.model;
  mc.peft = PeftConfig{};
  Rng init_rng(cfg.seed);
  RunResult result;
  Checkpoint& ck = result.checkpoint;
  ck.model = BrainDecoder::init(mc, init_rng);
  ck.model.set_trainability(Phase::source);
  ck.optimizer = AdamW(cfg.optimizer);
  ck.phase = Phase::source;
  ck.seed = cfg.seed;

  Rng shuffle_rng(cfg.seed + 1);
  Trainer trainer{cfg, Phase::source, ck.model, ck.optimizer, observer};
  trainer.run(train_all, test_all, shuffle_rng, result.report);
  ck.epoch = cfg.epochs;

  auto curve = std::move(result.report.curve);
  result.report = evaluate(ck.model, test_all, eval_options(cfg));
  result.report.curve = std::move(curve);
  return result;
}

EvalReport zero_shot(const RunConfig& cfg, const Checkpoint& source, const SubjectData& target) {
  const SplitData sp = split_subject(target, cfg.holdout_fraction);
  return evaluate(source.model, sp.test, eval_options(cfg));
}

RunResult adapt_target(const RunConfig& cfg, const Checkpoint& source, const SubjectData& target,
                       const BatchObserver& observer) {
  cfg.validate();
  ModelConfig want = cfg.model, have = source.model.config();
  if (have.peft.kind != PeftKind::none) throw ConfigError("adapt_target: source checkpoint already carries adapters");
  want.peft = PeftConfig{};
  if (!(want == have)) throw ConfigError("adapt_target: checkpoint model config does not match the run config");
  const SplitData sp = split_subject(target, cfg.holdout_fraction);
  if (sp.train.img.cols() != have.img_width() || sp.train.txt.cols() != have.txt_width()) {
    throw ConfigError("adapt_target: target embedding widths do not match the model");
  }

  RunResult result;
  Checkpoint& ck = result.checkpoint;
  ck.model = source.model;
  Rng adapter_rng(cfg.seed + 2);
  if (cfg.peft.kind != PeftKind::none) ck.model.apply_peft(cfg.peft, adapter_rng);
  ck.model.set_trainability(Phase::adaptation);
  ck.optimizer = AdamW(cfg.optimizer);
  ck.phase = Phase::adaptation;
  ck.seed = cfg.seed;

  Rng shuffle_rng(cfg.seed + 1);
  Trainer trainer{cfg, Phase::adaptation, ck.model, ck.optimizer, observer};
  trainer.run(sp.train, sp.test, shuffle_rng, result.report);
  ck.epoch = cfg.epochs;

  auto curve = std::move(result.report.curve);
  result.report = evaluate(ck.model, sp.test, eval_options(cfg));
  result.report.curve = std::move(curve);
  return result;
}

void export_features(const BrainDecoder& model, std::span<const SubjectData> data, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<Tensor> feats;
  std::vector<std::string> labels;
  for (const auto& s : data) {
    Tape tape;
    ParamBinder binder(tape, false);
    const ForwardOutputs out = model.forward(binder, s.fmri);
    feats.push_back(out.branch_img.value());
    for (std::size_t i = 0; i < s.samples(); ++i) labels.push_back(s.name);
  }
  const Tensor all = concat_rows(feats);

  auto open = [](const fs::path& p) {
    std::FILE* f = std::fopen(p.string().c_str(), "w");
    if (!f) throw IoError("cannot open " + p.string() + " for writing");
    return f;
  };
  std::FILE* f = open(dir / "features.csv");
  std::fprintf(f, "subject");
  for (std::size_t c = 0; c < all.cols(); ++c) std::fprintf(f, ",dim%zu", c);
  std::fprintf(f, "\n");
  for (std::size_t r = 0; r < all.rows(); ++r) {
    std::fprintf(f, "%s", labels[r].c_str());
    for (double v : all.row(r)) std::fprintf(f, ",%.9g", v);
    std::fprintf(f, "\n");
  }
  const bool ok = std::ferror(f) == 0;
  std::fclose(f);
  if (!ok) throw IoError("write failed for " + (dir / "features.csv").string());

  const Tensor proj = pca_project(all, std::min<std::size_t>(2, std::min(all.rows(), all.cols())));
  f = open(dir / "pca.csv");
  std::fprintf(f, "subject,pc0,pc1\n");
  for (std::size_t r = 0; r < proj.rows(); ++r) {
    std::fprintf(f, "%s,%.17g,%.17g\n", labels[r].c_str(), proj.at(r, 0), proj.cols() > 1 ? proj.at(r, 1) : 0.0);
  }
  std::fclose(f);
}

void write_metrics_csv(const fs::path& path, const std::vector<EpochRecord>& curve) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "epoch,l_image,l_text,l_wd,total,acc_img,acc_txt\n";
  for (const auto& r : curve) {
    out << r.epoch << ',' << format_double(r.l_image) << ',' << format_double(r.l_text) << ','
        << format_double(r.l_wd) << ',' << format_double(r.total) << ',' << format_double(r.acc_img) << ','
        << format_double(r.acc_txt) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sfbd
