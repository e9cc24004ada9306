#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "sfbd/checkpoint.hpp"
#include "sfbd/dataio.hpp"
#include "sfbd/error.hpp"
#include "sfbd/gradcheck.hpp"
#include "sfbd/model.hpp"
#include "sfbd/pipeline.hpp"

namespace sfbd::cli {

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Flags {
  std::string config;
  std::optional<std::string> peft;
  std::optional<std::size_t> rank;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> max_lr;
  std::uint64_t seed = 7;
  std::string out;
  std::string ckpt;
  std::vector<std::string> data;
  std::vector<std::string> exclude;
  std::size_t subjects = 4;
  std::size_t samples = 256;
  std::optional<double> shift;
  bool export_features = false;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open config file " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Config files are key=value lines: base (desk|paper), epochs, batch, max_lr,
// seed, peft, rank, holdout, distractors, temperature, weight.{softclip,mmd,wd},
// and optionally the full model.* block written into checkpoint manifests.
RunConfig config_from_file(const fs::path& path, Phase phase) {
  const auto kv = parse_key_values(read_file(path), path.string());
  auto get = [&](const std::string& k) -> std::optional<std::string> {
    auto it = kv.find(k);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };
  auto num = [&](const std::string& k, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size()) throw ConfigError(path.string() + ": bad number '" + v + "' for " + k);
    return d;
  };
  static const std::set<std::string> known = {"base",        "epochs",      "batch",          "max_lr",
                                              "seed",        "peft",        "rank",           "holdout",
                                              "distractors", "temperature", "weight.softclip", "weight.mmd",
                                              "weight.wd"};
  for (const auto& [k, v] : kv) {
    if (!known.count(k) && k.rfind("model.", 0) != 0) throw ConfigError(path.string() + ": unknown key '" + k + "'");
  }
  const std::string base = get("base").value_or("desk");
  if (base != "desk" && base != "paper") throw ConfigError(path.string() + ": base must be desk or paper");
  RunConfig c = base == "paper" ? RunConfig::paper(phase) : RunConfig::desk(phase);
  if (kv.count("model.pooled_width")) c.model = read_model_config(kv, path.string());
  if (auto v = get("epochs")) c.epochs = static_cast<std::size_t>(num("epochs", *v));
  if (auto v = get("batch")) c.batch_size = static_cast<std::size_t>(num("batch", *v));
  if (auto v = get("max_lr")) c.max_lr = num("max_lr", *v);
  if (auto v = get("seed")) c.seed = static_cast<std::uint64_t>(num("seed", *v));
  if (auto v = get("peft")) c.peft.kind = parse_peft_kind(*v);
  if (auto v = get("rank")) c.peft.rank = static_cast<std::size_t>(num("rank", *v));
  if (auto v = get("holdout")) c.holdout_fraction = num("holdout", *v);
  if (auto v = get("distractors")) c.distractors = static_cast<std::size_t>(num("distractors", *v));
  if (auto v = get("temperature")) c.losses.softclip.temperature = num("temperature", *v);
  if (auto v = get("weight.softclip")) c.losses.weights.softclip = num("weight.softclip", *v);
  if (auto v = get("weight.mmd")) c.losses.weights.mmd = num("weight.mmd", *v);
  if (auto v = get("weight.wd")) c.losses.weights.wd = num("weight.wd", *v);
  return c;
}

RunConfig resolve_config(const Flags& f, Phase phase) {
  RunConfig c;
  if (f.config.empty() || f.config == "desk") {
    c = RunConfig::desk(phase);
  } else if (f.config == "paper") {
    c = RunConfig::paper(phase);
  } else if (f.config.rfind("file:", 0) == 0) {
    c = config_from_file(f.config.substr(5), phase);
  } else {
    throw UsageError("--config must be paper, desk or file:<path>, got '" + f.config + "'");
  }
  c.seed = f.seed;
  if (f.peft) c.peft.kind = parse_peft_kind(*f.peft);
  if (f.rank) c.peft.rank = *f.rank;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.batch) c.batch_size = *f.batch;
  if (f.max_lr) c.max_lr = *f.max_lr;
  c.validate();
  return c;
}

fs::path require_out(const Flags& f) {
  if (f.out.empty()) throw UsageError("--out is required");
  return f.out;
}

std::vector<SubjectData> load_subjects(const Flags& f) {
  if (f.data.empty()) throw UsageError("--data is required");
  const std::set<std::string> excluded(f.exclude.begin(), f.exclude.end());
  std::vector<SubjectData> subjects;
  for (const fs::path p : f.data) {
    std::vector<fs::path> dirs;
    if (is_subject_dir(p)) {
      dirs.push_back(p);
    } else {
      dirs = list_subject_dirs(p);
      if (dirs.empty()) throw IoError("no subject directories under " + p.string());
    }
    for (const auto& d : dirs) {
      if (excluded.count(d.filename().string())) continue;
      subjects.push_back(read_subject(d));
    }
  }
  if (subjects.empty()) throw ConfigError("every subject was excluded");
  return subjects;
}

void print_report(std::ostream& out, const std::string& label, const EvalReport& r) {
  out << std::fixed << std::setprecision(4) << label << ": samples=" << r.samples << " acc_img=" << r.acc_img
      << " acc_txt=" << r.acc_txt << " acc_img_bwd=" << r.acc_img_bwd << " acc_txt_bwd=" << r.acc_txt_bwd
      << " mmd_img=" << r.mmd_img << " mmd_txt=" << r.mmd_txt << " wd_spectrum=" << r.wd_spectrum << '\n';
  out.unsetf(std::ios::floatfield);
}

void write_eval_csv(const fs::path& path, const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "label,samples,acc_img,acc_txt,acc_img_bwd,acc_txt_bwd,mmd_img,mmd_txt,wd_spectrum\n";
  for (const auto& [label, r] : rows) {
    out << label << ',' << r.samples << ',' << format_double(r.acc_img) << ',' << format_double(r.acc_txt) << ','
        << format_double(r.acc_img_bwd) << ',' << format_double(r.acc_txt_bwd) << ',' << format_double(r.mmd_img)
        << ',' << format_double(r.mmd_txt) << ',' << format_double(r.wd_spectrum) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

// The source model's config wins unless --config was given, in which case the
// two must agree.
Checkpoint load_source(const Flags& f, RunConfig& cfg) {
  if (f.ckpt.empty()) throw UsageError("--ckpt is required");
  Checkpoint ck = load_checkpoint(f.ckpt, f.config.empty() ? std::nullopt : std::optional(cfg.model));
  const PeftConfig peft = cfg.model.peft;
  cfg.model = ck.model.config();
  cfg.model.peft = peft;
  return ck;
}

int cmd_gen_data(const Flags& f, std::ostream& out) {
  const fs::path dir = require_out(f);
  SyntheticConfig sc = f.config == "paper" ? SyntheticConfig::paper() : SyntheticConfig::desk();
  if (!f.config.empty() && f.config != "paper" && f.config != "desk") {
    throw UsageError("gen-data takes --config paper or desk");
  }
  sc.n_subjects = f.subjects;
  sc.samples = f.samples;
  sc.seed = f.seed;
  if (f.shift) sc.shift = *f.shift;
  // More subjects than listed voxel counts reuse the counts cyclically.
  const std::size_t listed = sc.voxel_counts.size();
  for (std::size_t i = listed; i < sc.n_subjects; ++i) sc.voxel_counts.push_back(sc.voxel_counts[i % listed]);
  const SyntheticCohort cohort = gen_synthetic(sc);
  write_cohort(dir, cohort);
  out << "wrote " << cohort.subjects.size() << " subjects x " << sc.samples << " samples to " << dir.string() << '\n';
  return kOk;
}

int cmd_train_source(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve_config(f, Phase::source);
  const fs::path dir = require_out(f);
  const std::vector<SubjectData> subjects = load_subjects(f);
  const RunResult r = train_source(cfg, subjects);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", r.checkpoint);
  write_metrics_csv(dir / "metrics.csv", r.report.curve);
  write_eval_csv(dir / "eval.csv", {{"source", r.report}});
  out << "trained on " << subjects.size() << " subjects for " << cfg.epochs << " epochs\n";
  print_report(out, "source held-out", r.report);
  return kOk;
}

int cmd_adapt_target(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve_config(f, Phase::adaptation);
  const fs::path dir = require_out(f);
  if (f.data.size() != 1) throw UsageError("adapt-target takes exactly one --data subject directory");
  if (!is_subject_dir(f.data.front())) {
    throw UsageError(f.data.front() + " is not a single subject directory (fmri.ntsr, img.ntsr, txt.ntsr)");
  }
  const Checkpoint source = load_source(f, cfg);
  const SubjectData target = read_subject(f.data.front());
  const EvalReport before = zero_shot(cfg, source, target);
  const RunResult r = adapt_target(cfg, source, target);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.ckpt", r.checkpoint);
  write_metrics_csv(dir / "metrics.csv", r.report.curve);
  write_eval_csv(dir / "eval.csv", {{"zero_shot", before}, {"adapted", r.report}});
  out << "adapted to " << target.name << " for " << cfg.epochs << " epochs with " << to_string(cfg.peft.kind);
  if (cfg.peft.kind != PeftKind::none) out << "(r=" << cfg.peft.rank << ")";
  out << '\n';
  print_report(out, "zero-shot", before);
  print_report(out, "adapted", r.report);
  return kOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve_config(f, Phase::source);
  const Checkpoint ck = load_source(f, cfg);
  const std::vector<SubjectData> subjects = load_subjects(f);
  EvalOptions opts{cfg.distractors, cfg.seed, cfg.losses.mmd, cfg.losses.spectrum_norm};
  std::vector<std::pair<std::string, EvalReport>> rows;
  std::vector<SubjectData> held_out;
  for (const auto& s : subjects) {
    SplitData sp = split_subject(s, cfg.holdout_fraction);
    rows.emplace_back(s.name, evaluate(ck.model, sp.test, opts));
    print_report(out, s.name, rows.back().second);
    held_out.push_back(std::move(sp.test));
  }
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_eval_csv(fs::path(f.out) / "eval.csv", rows);
    if (f.export_features) export_features(ck.model, held_out, f.out);
  } else if (f.export_features) {
    throw UsageError("--export-features needs --out");
  }
  return kOk;
}

int cmd_param_count(const Flags& f, std::ostream& out) {
  RunConfig cfg = resolve_config(f, Phase::adaptation);
  const ParamCount c = trainable_param_count(cfg.model, cfg.peft);
  out << "peft=" << to_string(cfg.peft.kind);
  if (cfg.peft.kind != PeftKind::none) out << " rank=" << cfg.peft.rank;
  out << " trainable=" << c.trainable << " total=" << c.total << " fraction=" << std::fixed << std::setprecision(2)
      << 100.0 * c.fraction << "%\n";
  out.unsetf(std::ios::floatfield);
  return kOk;
}

int cmd_grad_check(const Flags& f, std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_gradient_suite(f.seed)) {
    const bool pass = r.max_rel_error < kGradCheckTolerance;
    ok = ok && pass;
    out << (pass ? "PASS " : "FAIL ") << std::left << std::setw(40) << r.name << " coords=" << std::setw(6)
        << r.coordinates << " max_rel_err=" << std::scientific << std::setprecision(3) << r.max_rel_error << '\n';
    out.unsetf(std::ios::floatfield);
    out << std::right;
  }
  return ok ? kOk : kRuntime;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source-free brain-decoding trainer: synthetic data, source training, target adaptation"};
  app.name("sfbd");
  app.require_subcommand(1);
  // Top-level help expands every subcommand's flags.
  app.set_help_flag();
  app.set_help_all_flag("-h,--help", "Print help for every subcommand and exit");
  Flags f;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", f.seed, "Seed for all randomness")->capture_default_str(); };
  auto add_config = [&](CLI::App* c) {
    c->add_option("--config", f.config, "paper, desk (default) or file:<path>");
  };
  auto add_run = [&](CLI::App* c) {
    add_config(c);
    c->add_option("--peft", f.peft, "Head adapters when adapting: none, lora, dora")
        ->check(CLI::IsMember({"none", "lora", "dora"}));
    c->add_option("--rank", f.rank, "Adapter rank")->check(CLI::PositiveNumber);
    c->add_option("--epochs", f.epochs, "Training epochs");
    c->add_option("--batch", f.batch, "Batch size")->check(CLI::Range(2, 1 << 20));
    c->add_option("--max-lr", f.max_lr, "Peak learning rate of the one-cycle schedule")->check(CLI::PositiveNumber);
    add_seed(c);
  };

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic multi-subject cohort");
  gen->add_option("--out", f.out, "Cohort directory")->required();
  gen->add_option("--subjects", f.subjects, "Number of subjects")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--samples", f.samples, "Samples per subject")->capture_default_str()->check(CLI::Range(2, 1 << 24));
  gen->add_option("--shift", f.shift, "Cross-subject projection shift")->check(CLI::NonNegativeNumber);
  add_config(gen);
  add_seed(gen);

  auto* train = app.add_subcommand("train-source", "Train the source model on one or more subjects");
  add_run(train);
  train->add_option("--data", f.data, "Subject or cohort directory (repeatable)")->required();
  train->add_option("--exclude", f.exclude, "Subject names to leave out (repeatable)");
  train->add_option("--out", f.out, "Output directory: model.ckpt/, metrics.csv, eval.csv")->required();

  auto* adapt = app.add_subcommand("adapt-target", "Adapt a source checkpoint to one target subject");
  add_run(adapt);
  adapt->add_option("--ckpt", f.ckpt, "Source checkpoint directory")->required();
  adapt->add_option("--data", f.data, "Target subject directory")->required()->expected(1);
  adapt->add_option("--out", f.out, "Output directory: model.ckpt/, metrics.csv, eval.csv")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out splits");
  add_config(eval);
  add_seed(eval);
  eval->add_option("--ckpt", f.ckpt, "Checkpoint directory")->required();
  eval->add_option("--data", f.data, "Subject or cohort directory (repeatable)")->required();
  eval->add_option("--exclude", f.exclude, "Subject names to leave out (repeatable)");
  eval->add_option("--out", f.out, "Directory for eval.csv and exported features");
  eval->add_flag("--export-features", f.export_features, "Write features.csv and pca.csv under --out");

  auto* count = app.add_subcommand("param-count", "Trainable parameter share under the adaptation policy");
  add_config(count);
  count->add_option("--peft", f.peft, "none, lora or dora")->check(CLI::IsMember({"none", "lora", "dora"}));
  count->add_option("--rank", f.rank, "Adapter rank")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("grad-check", "Finite-difference audit of every loss gradient");
  add_seed(grad);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out);
    if (train->parsed()) return cmd_train_source(f, out);
    if (adapt->parsed()) return cmd_adapt_target(f, out);
    if (eval->parsed()) return cmd_eval(f, out);
    if (count->parsed()) return cmd_param_count(f, out);
    if (grad->parsed()) return cmd_grad_check(f, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace sfbd::cli
