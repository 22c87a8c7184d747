#pragma once
// Checkpoint file: 8-byte little-endian header length, JSON header, then a
// little-endian float32 payload. Header entries list every tensor's name,
// shape and element offset; the offsets tile the payload exactly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xedit/autodiff/optim.hpp"
#include "xedit/editor.hpp"
#include "xedit/harness/config.hpp"

namespace xedit::harness {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointTensor {
  std::string name;
  ad::Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::map<std::string, std::string> config;  // "section.key" -> value
  std::uint64_t step = 0;                     // optimizer steps completed
  std::uint64_t seed = 0;                     // training seed
  std::uint64_t next_step = 1;                // next per-step RNG stream index
  std::int64_t adam_step = 0;
  bool lora = false;
  std::vector<CheckpointTensor> tensors;      // parameters, then optim.m.* / optim.v.*

  const CheckpointTensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Captures all model parameters (and the optimizer moments of `trainable`
/// when `adam` is given).
Checkpoint make_checkpoint(const Config& cfg, const EditModel<float>& model,
                           const ParamList<float>* trainable, const ad::AdamState<float>* adam,
                           std::uint64_t step);

/// Model described by the checkpoint's config snapshot, with LoRA applied if
/// the checkpoint carries LoRA factors, and every parameter restored.
/// Throws CheckpointError on a missing or mis-shaped tensor.
EditModel<float> model_from_checkpoint(const Checkpoint& ckpt);

/// Copies parameter values by name into an existing model.
void restore_parameters(const Checkpoint& ckpt, EditModel<float>& model,
                        bool allow_missing_lora = false);

/// Restores Adam moments for `trainable` (in order).
void restore_optimizer(const Checkpoint& ckpt, const ParamList<float>& trainable,
                       ad::AdamState<float>& adam);

Config config_from_checkpoint(const Checkpoint& ckpt);

}  // namespace xedit::harness
