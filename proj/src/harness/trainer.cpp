#include "xedit/harness/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "xedit/autodiff/optim.hpp"
#include "xedit/harness/checkpoint.hpp"

namespace xedit::harness {

namespace fs = std::filesystem;

EditModel<float> build_training_model(const Config& cfg) {
  auto model = EditModel<float>::init(cfg.model, cfg.train.seed);
  if (cfg.train.lora_only) {
    if (!cfg.train.base_checkpoint.empty()) {
      restore_parameters(load_checkpoint(cfg.train.base_checkpoint), model, true);
    }
    model.apply_lora(cfg.lora_rank, static_cast<float>(cfg.lora_scale), cfg.train.seed);
    freeze_base(model, cfg.train.unfreeze);
  }
  return model;
}

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write loss log '" + path.string() + "'");
  os << "step,loss\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%llu,%.17g\n", static_cast<unsigned long long>(r.step), r.loss);
    os << buf;
  }
}

void write_timing_csv(const fs::path& path, const std::vector<LossRecord>& log) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write timing log '" + path.string() + "'");
  os << "step,wall_ms\n";
  char buf[64];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%llu,%.3f\n", static_cast<unsigned long long>(r.step), r.wall_ms);
    os << buf;
  }
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read loss log '" + path.string() + "'");
  std::vector<LossRecord> out;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    LossRecord r;
    unsigned long long step = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf", &step, &r.loss) != 2) {
      throw std::runtime_error("malformed loss log line in '" + path.string() + "': " + line);
    }
    r.step = step;
    out.push_back(r);
  }
  return out;
}

namespace {

std::string step_name(std::uint64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06llu.ckpt", static_cast<unsigned long long>(step));
  return buf;
}

}  // namespace

std::vector<std::size_t> batch_instances(const Config& cfg,
                                         const std::vector<std::size_t>& train_indices,
                                         std::uint64_t step) {
  if (train_indices.empty()) throw DatasetError("dataset has no training instances");
  Rng pick = Rng::stream(cfg.train.seed, "train.batch", step);
  std::vector<std::size_t> out(cfg.train.batch);
  for (auto& i : out) i = train_indices[pick.below(train_indices.size())];
  return out;
}

double learning_rate(const TrainConfig& cfg, std::uint64_t step) {
  const double s = static_cast<double>(step);
  if (step <= cfg.warmup) return cfg.lr * s / static_cast<double>(cfg.warmup + 1);
  if (cfg.lr_schedule != "cosine" || cfg.steps <= cfg.warmup) return cfg.lr;
  const double progress =
      (s - static_cast<double>(cfg.warmup)) / static_cast<double>(cfg.steps - cfg.warmup);
  return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

TrainResult train_model(const Config& cfg, const DatasetCache& data, const TrainRun& run) {
  const auto train_idx = data.split_indices("train");
  if (train_idx.empty()) throw std::runtime_error("dataset has no training instances");

  TrainResult res{build_training_model(cfg), {}, 0, {}};
  auto& model = res.model;
  const auto trainable = trainable_params(model);
  std::vector<ad::Tensor<float>> params;
  for (const auto& p : trainable) params.push_back(p.tensor);
  auto adam = ad::AdamState<float>::for_params(params);
  ad::AdamConfig acfg;
  acfg.lr = cfg.train.lr;
  acfg.weight_decay = cfg.train.weight_decay;

  std::uint64_t start = 1;
  if (!run.resume.empty()) {
    const auto ckpt = load_checkpoint(run.resume);
    if (ckpt.seed != cfg.train.seed) {
      throw CheckpointError("resume checkpoint was trained with seed " + std::to_string(ckpt.seed) +
                            ", config says " + std::to_string(cfg.train.seed));
    }
    restore_parameters(ckpt, model);
    restore_optimizer(ckpt, trainable, adam);
    start = ckpt.next_step;
    const fs::path csv = run.out_dir / "loss.csv";
    if (!run.out_dir.empty() && fs::exists(csv)) {
      for (const auto& r : read_loss_csv(csv))
        if (r.step < start) res.log.push_back(r);
    }
  }
  if (!run.out_dir.empty()) fs::create_directories(run.out_dir);

  const std::uint64_t last =
      run.stop_after ? std::min<std::uint64_t>(run.stop_after, cfg.train.steps) : cfg.train.steps;
  TrainOptions opts;
  opts.p_drop = cfg.train.p_drop;
  opts.clean_weighting = cfg.train.loss_weight == "clean";
  opts.alpha = cfg.model.adapter.alpha;
  const std::size_t batch = cfg.train.batch;
  const double weight = 1.0 / static_cast<double>(batch);
  const auto t0 = std::chrono::steady_clock::now();

  auto save = [&](std::uint64_t step, const fs::path& path) {
    save_checkpoint(path, make_checkpoint(cfg, model, &trainable, &adam, step));
    write_loss_csv(run.out_dir / "loss.csv", res.log);
    write_timing_csv(run.out_dir / "timing.csv", res.log);
  };

  for (std::uint64_t step = start; step <= last; ++step) {
    const auto picks = batch_instances(cfg, train_idx, step);
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t inst = picks[b];
      Rng rng = Rng::stream(cfg.train.seed, "train.example", step * batch + b);
      try {
        loss += training_step(model, data.sample(inst), rng, opts, weight) * weight;
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step) +
                                  " (seed " + std::to_string(cfg.train.seed) + ", instance " +
                                  std::to_string(inst) + ")",
                              e.t);
      }
    }
    acfg.lr = learning_rate(cfg.train, step);
    ad::adam_step(params, adam, acfg);
    ad::zero_grads(params);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back({step, loss, ms});
    if (run.progress && (step % 100 == 0 || step == last)) {
      *run.progress << "step " << step << "/" << cfg.train.steps << "  loss " << loss << "  "
                    << static_cast<long long>(ms / 1000.0) << "s\n";
    }
    if (!run.out_dir.empty() && cfg.train.checkpoint_every &&
        step % cfg.train.checkpoint_every == 0) {
      save(step, run.out_dir / step_name(step));
    }
  }
  res.final_step = std::max<std::uint64_t>(last, start - 1);
  if (!run.out_dir.empty()) {
    res.final_checkpoint =
        run.out_dir / (res.final_step == cfg.train.steps ? std::string("final.ckpt")
                                                         : step_name(res.final_step));
    save(res.final_step, res.final_checkpoint);
  }
  return res;
}

}  // namespace xedit::harness
