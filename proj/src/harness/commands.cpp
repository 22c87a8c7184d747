#include "xedit/harness/commands.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>

#include <json.hpp>

#include "xedit/autodiff/tensor.hpp"
#include "xedit/harness/checkpoint.hpp"
#include "xedit/harness/dataset_cache.hpp"
#include "xedit/harness/evaluate.hpp"
#include "xedit/harness/gradcheck_suite.hpp"
#include "xedit/harness/trainer.hpp"
#include "xedit/metrics.hpp"

namespace xedit::harness {

namespace fs = std::filesystem;
using nlohmann::json;

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DatasetError& e) {
    err << "dataset error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ImageError& e) {
    err << "image error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    err << "invalid input: " << e.what() << '\n';
    return kExitValidation;
  } catch (const DivergenceError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + path.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

DatasetCache load_dataset(const Config& cfg) {
  if (!fs::exists(fs::path(cfg.dataset_path) / "manifest.json")) {
    throw DatasetError("no dataset at '" + cfg.dataset_path + "' (run `xedit datagen` first)");
  }
  auto data = DatasetCache::load(cfg.dataset_path);
  if (data.manifest.height != cfg.model.backbone.height ||
      data.manifest.width != cfg.model.backbone.width) {
    throw DatasetError("dataset '" + cfg.dataset_path + "' resolution does not match the model");
  }
  return data;
}

EvalOptions eval_options(const Config& cfg, const CommandOptions& o) {
  EvalOptions e;
  e.steps = o.steps.value_or(cfg.sampler.steps);
  e.guidance = o.guidance.value_or(cfg.sampler.guidance);
  e.alpha = o.alpha.value_or(cfg.model.adapter.alpha);
  e.seed = o.seed.value_or(cfg.sampler.seed);
  e.max_instances = cfg.eval.max_instances;
  return e;
}

fs::path require_checkpoint(const CommandOptions& o) {
  if (!o.checkpoint) throw ConfigError("--checkpoint is required");
  return *o.checkpoint;
}

}  // namespace

int cmd_datagen(const CommandOptions& o, std::ostream& out, std::ostream&) {
  Config cfg = load_config(o.config);
  if (o.seed) cfg.dataset.seed = *o.seed;
  const fs::path root = o.out ? *o.out : fs::path(cfg.dataset_path);
  const auto m = build_dataset(cfg.dataset, root);
  const std::string summary = dataset_summary(m);
  write_text(root / "summary.txt", summary);
  out << "dataset written to " << root.string() << "\n" << summary;
  return kExitOk;
}

int cmd_train(const CommandOptions& o, std::ostream& out, std::ostream&) {
  Config cfg = load_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  const auto data = load_dataset(cfg);
  TrainRun run;
  run.out_dir = o.out ? *o.out : fs::path(cfg.run_path);
  if (o.checkpoint) run.resume = *o.checkpoint;
  run.progress = &out;
  const auto res = train_model(cfg, data, run);
  out << "trained " << res.final_step << " steps; checkpoint " << res.final_checkpoint.string()
      << "; loss log " << (run.out_dir / "loss.csv").string() << '\n';
  return kExitOk;
}

int cmd_sample(const CommandOptions& o, std::ostream& out, std::ostream&) {
  const auto ckpt = load_checkpoint(require_checkpoint(o));
  const Config cfg = config_from_checkpoint(ckpt);
  const auto model = model_from_checkpoint(ckpt);
  if (!o.out) throw ConfigError("--out is required");

  SampleRequest req;
  req.steps = o.steps.value_or(cfg.sampler.steps);
  req.guidance = o.guidance.value_or(cfg.sampler.guidance);
  req.alpha = o.alpha.value_or(cfg.model.adapter.alpha);
  req.seed = o.seed.value_or(cfg.sampler.seed);
  std::optional<Image> truth;
  if (o.instance) {
    Config dcfg = cfg;
    if (!o.config.empty()) dcfg = load_config(o.config);
    const auto data = load_dataset(dcfg);
    if (*o.instance >= data.manifest.instances.size()) {
      throw ConfigError("instance " + std::to_string(*o.instance) + " out of range (dataset has " +
                        std::to_string(data.manifest.instances.size()) + ")");
    }
    const auto s = data.sample(*o.instance);
    req.prompt = s.prompt;
    req.reference = s.reference;
    req.source = s.source;
    req.instruction = s.instruction;
    if (!o.seed) req.seed = instance_seed(cfg.sampler.seed, *o.instance);
    truth = s.target;
  } else {
    if (!o.prompt || !o.reference || !o.source) {
      throw ConfigError("give either --instance or all of --prompt, --reference and --source");
    }
    req.prompt = read_ppm(*o.prompt);
    req.reference = read_ppm(*o.reference);
    req.source = read_ppm(*o.source);
    req.instruction = o.instruction.value_or(0);
  }
  const Image pred = quantize(sample(model, req));
  write_ppm(*o.out, pred);
  out << "wrote " << o.out->string() << '\n';
  if (truth) out << "MSE vs ground truth: " << std::setprecision(6) << metrics::mse(pred, *truth) << '\n';
  return kExitOk;
}

int cmd_eval(const CommandOptions& o, std::ostream& out, std::ostream&) {
  const auto ckpt = load_checkpoint(require_checkpoint(o));
  const auto model = model_from_checkpoint(ckpt);
  const Config cfg = o.config.empty() ? config_from_checkpoint(ckpt) : load_config(o.config);
  const auto data = load_dataset(cfg);
  auto opts = eval_options(cfg, o);
  opts.split = o.split.value_or("seen");
  opts.method = conditioning_name(model.config.conditioning);
  const auto rep = evaluate(model, data, opts, model.adapter.encoder);
  const fs::path dir = o.out ? *o.out : fs::path(cfg.run_path) / "eval";
  write_text(dir / ("report_" + opts.split + ".json"), rep.to_json());
  write_text(dir / ("report_" + opts.split + ".txt"), rep.to_table());
  out << rep.to_table();
  return kExitOk;
}

int cmd_ablate(const CommandOptions& o, std::ostream& out, std::ostream&) {
  Config base = load_config(o.config);
  if (o.seed) base.train.seed = *o.seed;
  const auto data = load_dataset(base);
  const fs::path root = o.out ? *o.out : fs::path(base.run_path) / "ablate";
  const auto opts = eval_options(base, o);
  const bool has_unseen = !data.eval_indices("unseen").empty();

  struct Variant {
    Conditioning cond;
    EditModel<float> model;
  };
  std::vector<Variant> variants;
  for (Conditioning c : {Conditioning::adapter, Conditioning::concat, Conditioning::none}) {
    Config cfg = base;
    cfg.model.conditioning = c;
    TrainRun run;
    run.out_dir = root / conditioning_name(c);
    run.progress = &out;
    out << "== training " << conditioning_name(c) << " ==\n";
    variants.push_back({c, train_model(cfg, data, run).model});
  }
  // One feature extractor for every row, so CLIP-I values are comparable.
  const auto& encoder = variants.front().model.adapter.encoder;

  std::vector<metrics::MetricReport> rows;
  json j;
  auto run_eval = [&](const EditModel<float>& m, const std::string& method, const std::string& split,
                      double alpha) {
    auto e = opts;
    e.split = split;
    e.method = method;
    e.alpha = alpha;
    auto rep = evaluate(m, data, e, encoder);
    j["reports"][method + "-" + split] = json::parse(rep.to_json());
    return rep;
  };
  for (std::size_t v = 0; v < 2; ++v) {
    const std::string name = conditioning_name(variants[v].cond);
    rows.push_back(run_eval(variants[v].model, name, "seen", opts.alpha));
    if (has_unseen) {
      rows.push_back(run_eval(variants[v].model, name, "unseen", opts.alpha));
    } else {
      metrics::MetricReport empty;
      empty.method = name;
      empty.split = "unseen";
      empty.metrics = rows.front().metrics;
      empty.aggregate();
      rows.push_back(empty);
    }
  }
  std::string table = comparison_table(rows);

  const auto control = run_eval(variants[2].model, "none", "seen", opts.alpha);
  const auto alpha0 = run_eval(variants[0].model, "adapter_alpha0", "seen", 0.0);
  std::ostringstream extra;
  extra << std::fixed << std::setprecision(5);
  extra << "\ncontrol (no exemplar conditioning) -S MSE: " << control.overall.at("MSE").mean << '\n';
  extra << "adapter with alpha = 0 -S MSE:            " << alpha0.overall.at("MSE").mean << '\n';
  j["control_seen_mse"] = control.overall.at("MSE").mean;
  j["adapter_alpha0_seen_mse"] = alpha0.overall.at("MSE").mean;

  bool two_task = data.manifest.tasks.size() == 2;
  for (const auto& t : data.manifest.tasks) two_task = two_task && (t.name == "identity" || t.name == "invert");
  if (two_task) {
    const double bound = blind_bound(data, take_spread(data.eval_indices("seen"), opts.max_instances));
    extra << "blind-predictor bound (identity/invert): " << bound << '\n';
    j["blind_bound"] = bound;
  }
  table += extra.str();
  j["table"] = table;
  write_text(root / "ablation.txt", table);
  write_text(root / "ablation.json", j.dump(2) + "\n");
  out << table;
  return kExitOk;
}

int cmd_gradcheck(const CommandOptions& o, std::ostream& out, std::ostream&) {
  GradSuiteOptions opts;
  opts.seeds = o.gradcheck_seeds;
  opts.inject_fault = o.inject_fault;
  if (o.seed) opts.base_seed = *o.seed;
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradient_suite(opts);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::size_t failed = 0;
  for (const auto& r : reports) {
    if (!r.passed) {
      ++failed;
      out << "FAIL " << r.name << "  max rel err " << std::scientific << std::setprecision(3)
          << r.worst << std::defaultfloat;
      if (!r.diagnostic.empty()) out << "  (" << r.diagnostic << ")";
      out << '\n';
    }
  }
  double worst = 0.0;
  for (const auto& r : reports) worst = std::max(worst, r.worst);
  out << reports.size() - failed << "/" << reports.size() << " checks passed, worst relative error "
      << std::scientific << std::setprecision(3) << worst << std::defaultfloat << ", "
      << std::fixed << std::setprecision(2) << secs << " s\n";
  return failed ? kExitRuntime : kExitOk;
}

}  // namespace xedit::harness
