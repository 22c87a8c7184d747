#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "xedit/editor.hpp"
#include "xedit/harness/config.hpp"
#include "xedit/harness/dataset_cache.hpp"

namespace xedit::harness {

struct LossRecord {
  std::uint64_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainRun {
  std::filesystem::path out_dir;  // loss.csv and checkpoints; empty writes nothing
  std::filesystem::path resume;   // checkpoint to continue from
  std::uint64_t stop_after = 0;   // stop early after this step (0 = run to cfg.train.steps)
  std::ostream* progress = nullptr;
};

struct TrainResult {
  EditModel<float> model;
  std::vector<LossRecord> log;
  std::uint64_t final_step = 0;
  std::filesystem::path final_checkpoint;
};

/// Model in its configured training regime (LoRA wrapping, frozen base and
/// base checkpoint applied as configured).
EditModel<float> build_training_model(const Config& cfg);

/// Instances drawn for one optimizer step. Depends only on the training seed,
/// batch size, step and the train split, never on the model.
std::vector<std::size_t> batch_instances(const Config& cfg,
                                         const std::vector<std::size_t>& train_indices,
                                         std::uint64_t step);

/// Learning rate for optimizer step `step` (1-based): linear warmup to
/// cfg.lr, then constant or cosine decay to zero at cfg.steps.
double learning_rate(const TrainConfig& cfg, std::uint64_t step);

/// Seeded training loop. Step s draws its batch from stream ("train.batch", s)
/// and example b from ("train.example", s * batch + b), so a resumed run
/// reproduces the uninterrupted one exactly.
TrainResult train_model(const Config& cfg, const DatasetCache& data, const TrainRun& run = {});

/// "step,loss" rows; byte-identical across runs with the same config and seed.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);
/// "step,wall_ms" rows (wall-clock, not reproducible).
void write_timing_csv(const std::filesystem::path& path, const std::vector<LossRecord>& log);

}  // namespace xedit::harness
