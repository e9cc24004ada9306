#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "sfbd/dataio.hpp"
#include "sfbd/model.hpp"
#include "sfbd/optim.hpp"

namespace sfbd {

/// Model parameters, optimizer state and the settings that produced them.
struct Checkpoint {
  BrainDecoder model;
  AdamW optimizer;
  Phase phase = Phase::source;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
};

std::string to_string(Phase phase);
Phase parse_phase(const std::string& s);

/// Directory layout:
///   manifest.txt             key=value lines
///   <param>.ntsr             one file per model parameter (f64)
///   optim/<param>.m.ntsr     AdamW first moment
///   optim/<param>.v.ntsr     AdamW second moment
void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt);

/// With `expected`, the stored model config (ignoring adapters) must match.
Checkpoint load_checkpoint(const fs::path& dir, const std::optional<ModelConfig>& expected = std::nullopt);

// Line-oriented key=value parsing shared by the manifest and config files.
std::multimap<std::string, std::string> parse_key_values(const std::string& text, const std::string& source);
std::string format_double(double v);

void write_model_config(std::ostream& out, const ModelConfig& cfg);
ModelConfig read_model_config(const std::multimap<std::string, std::string>& kv, const std::string& source);

}  // namespace sfbd
