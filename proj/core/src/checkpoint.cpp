#include "sfbd/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "sfbd/error.hpp"

namespace sfbd {

namespace {

constexpr int kManifestVersion = 1;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

const std::string& require_key(const std::multimap<std::string, std::string>& kv, const std::string& key,
                               const std::string& source) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(source + ": missing key '" + key + "'");
  return it->second;
}

template <typename T>
T parse_number(const std::string& text, const std::string& key, const std::string& source) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(source + ": cannot parse value '" + text + "' for key '" + key + "'");
  }
  return v;
}

std::size_t get_size(const std::multimap<std::string, std::string>& kv, const std::string& key,
                     const std::string& source) {
  return parse_number<std::size_t>(require_key(kv, key, source), key, source);
}

double get_double(const std::multimap<std::string, std::string>& kv, const std::string& key,
                  const std::string& source) {
  return parse_number<double>(require_key(kv, key, source), key, source);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(Phase phase) { return phase == Phase::source ? "source" : "adaptation"; }

Phase parse_phase(const std::string& s) {
  if (s == "source") return Phase::source;
  if (s == "adaptation") return Phase::adaptation;
  throw ConfigError("unknown phase '" + s + "'");
}

std::multimap<std::string, std::string> parse_key_values(const std::string& text, const std::string& source) {
  std::multimap<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv.emplace(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_model_config(std::ostream& out, const ModelConfig& cfg) {
  out << "model.pooled_width=" << cfg.pooled_width << '\n'
      << "model.hidden=" << cfg.hidden << '\n'
      << "model.img_tokens=" << cfg.img_tokens << '\n'
      << "model.img_dim=" << cfg.img_dim << '\n'
      << "model.txt_tokens=" << cfg.txt_tokens << '\n'
      << "model.txt_dim=" << cfg.txt_dim << '\n'
      << "model.translator_blocks=" << cfg.translator_blocks << '\n'
      << "model.peft=" << to_string(cfg.peft.kind) << '\n'
      << "model.rank=" << cfg.peft.rank << '\n';
}

ModelConfig read_model_config(const std::multimap<std::string, std::string>& kv, const std::string& source) {
  ModelConfig c;
  c.pooled_width = get_size(kv, "model.pooled_width", source);
  c.hidden = get_size(kv, "model.hidden", source);
  c.img_tokens = get_size(kv, "model.img_tokens", source);
  c.img_dim = get_size(kv, "model.img_dim", source);
  c.txt_tokens = get_size(kv, "model.txt_tokens", source);
  c.txt_dim = get_size(kv, "model.txt_dim", source);
  c.translator_blocks = get_size(kv, "model.translator_blocks", source);
  c.peft.kind = parse_peft_kind(require_key(kv, "model.peft", source));
  c.peft.rank = get_size(kv, "model.rank", source);
  c.validate();
  return c;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir / "optim");
  std::ostringstream manifest;
  manifest << "format=" << kManifestVersion << '\n'
           << "phase=" << to_string(ckpt.phase) << '\n'
           << "epoch=" << ckpt.epoch << '\n'
           << "seed=" << ckpt.seed << '\n';
  write_model_config(manifest, ckpt.model.config());
  const AdamWConfig& oc = ckpt.optimizer.config();
  manifest << "optim.beta1=" << format_double(oc.beta1) << '\n'
           << "optim.beta2=" << format_double(oc.beta2) << '\n'
           << "optim.eps=" << format_double(oc.eps) << '\n'
           << "optim.weight_decay=" << format_double(oc.weight_decay) << '\n'
           << "optim.step=" << ckpt.optimizer.steps() << '\n';
  for (const auto& [name, tensor] : ckpt.model.parameters()) {
    manifest << "param=" << name << '\n';
    write_tensor(dir / (name + ".ntsr"), *tensor);
  }
  for (const auto& [name, mom] : ckpt.optimizer.moments()) {
    manifest << "moment=" << name << '\n';
    write_tensor(dir / "optim" / (name + ".m.ntsr"), mom.first);
    write_tensor(dir / "optim" / (name + ".v.ntsr"), mom.second);
  }
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
  out << manifest.str();
}

Checkpoint load_checkpoint(const fs::path& dir, const std::optional<ModelConfig>& expected) {
  const fs::path manifest_path = dir / "manifest.txt";
  ReadAudit::global().record(manifest_path);
  const std::string source = manifest_path.string();
  const auto kv = parse_key_values(read_text(manifest_path), source);
  const auto format = get_size(kv, "format", source);
  if (format != kManifestVersion) {
    throw FormatError(source + ": unsupported manifest format " + std::to_string(format));
  }

  Checkpoint ckpt;
  ckpt.phase = parse_phase(require_key(kv, "phase", source));
  ckpt.epoch = get_size(kv, "epoch", source);
  ckpt.seed = parse_number<std::uint64_t>(require_key(kv, "seed", source), "seed", source);
  const ModelConfig cfg = read_model_config(kv, source);
  if (expected) {
    ModelConfig a = cfg, b = *expected;
    a.peft = b.peft = PeftConfig{};
    if (!(a == b)) throw ConfigError(source + ": checkpoint model config does not match the requested config");
  }

  Rng rng(0);
  ckpt.model = BrainDecoder::init(cfg, rng);
  std::set<std::string> listed;
  for (auto [it, end] = kv.equal_range("param"); it != end; ++it) listed.insert(it->second);
  for (auto& p : ckpt.model.parameters()) {
    if (!listed.count(p.name)) throw FormatError(source + ": parameter '" + p.name + "' missing from manifest");
    const fs::path file = dir / (p.name + ".ntsr");
    if (!fs::exists(file)) throw IoError("checkpoint parameter '" + p.name + "' has no file " + file.string());
    Tensor t = read_tensor(file);
    if (t.shape() != p.value->shape()) {
      throw ConfigError("checkpoint parameter '" + p.name + "' has shape " + shape_string(t.shape()) +
                        ", model expects " + shape_string(p.value->shape()));
    }
    *p.value = std::move(t);
    listed.erase(p.name);
  }
  if (!listed.empty()) throw FormatError(source + ": unknown parameter '" + *listed.begin() + "'");
  ckpt.model.set_trainability(ckpt.phase);

  AdamWConfig oc;
  oc.beta1 = get_double(kv, "optim.beta1", source);
  oc.beta2 = get_double(kv, "optim.beta2", source);
  oc.eps = get_double(kv, "optim.eps", source);
  oc.weight_decay = get_double(kv, "optim.weight_decay", source);
  std::map<std::string, AdamMoments> moments;
  for (auto [it, end] = kv.equal_range("moment"); it != end; ++it) {
    const std::string& name = it->second;
    moments[name] = AdamMoments{read_tensor(dir / "optim" / (name + ".m.ntsr")),
                                read_tensor(dir / "optim" / (name + ".v.ntsr"))};
  }
  ckpt.optimizer = AdamW(oc);
  ckpt.optimizer.restore(parse_number<std::int64_t>(require_key(kv, "optim.step", source), "optim.step", source),
                         std::move(moments));
  return ckpt;
}

}  // namespace sfbd
