#pragma once
// Flat "key = value" configuration with [sections].

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xedit/datagen.hpp"
#include "xedit/editor.hpp"

namespace xedit::harness {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  double lr = 1e-4;
  std::size_t steps = 2000;
  std::size_t batch = 4;  // examples accumulated per optimizer step
  double p_drop = 0.1;
  std::uint64_t seed = 1000;
  double weight_decay = 0.0;
  std::string lr_schedule = "constant";  // constant | cosine
  std::size_t warmup = 0;                // linear warmup steps
  std::string loss_weight = "velocity";  // velocity | clean (t^2-weighted)
  std::size_t checkpoint_every = 500;
  bool train_base = true;  // full-model training
  bool lora_only = false;  // frozen base + LoRA factors
  std::vector<std::string> unfreeze;  // parameter-name prefixes kept trainable under lora_only
  std::string base_checkpoint;        // optional starting weights for lora_only
};

struct SamplerConfig {
  std::size_t steps = 24;
  double guidance = 0.0;
  std::uint64_t seed = 1000;
};

struct EvalConfig {
  std::size_t max_instances = 0;  // per split; 0 = all
};

struct Config {
  ModelConfig model;
  std::size_t lora_rank = 8;
  double lora_scale = 1.0;
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;
  DatasetConfig dataset;
  std::string dataset_path = "data/toy";
  std::string run_path = "runs/toy";

  /// Cross-field checks; throws ConfigError naming the first problem.
  void validate() const;
};

/// Parses config text. Unknown sections/keys, duplicates and malformed
/// values are rejected with `origin:line` context. Validates the result.
Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::filesystem::path& path);

/// Every key as "section.key" -> canonical value text, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const Config& cfg);
/// Canonical config text; parse_config(to_text(c)) reproduces c.
std::string to_text(const Config& cfg);
/// Applies "section.key" -> value pairs on top of defaults and validates.
Config from_entries(const std::map<std::string, std::string>& entries);

}  // namespace xedit::harness
