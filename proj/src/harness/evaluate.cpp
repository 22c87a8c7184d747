#include "xedit/harness/evaluate.hpp"

#include <stdexcept>

namespace xedit::harness {

std::uint64_t instance_seed(std::uint64_t seed, std::size_t instance_index) {
  return mix64(seed ^ mix64(0x1F2E3D4C5B6A7988ULL + instance_index));
}

std::vector<std::size_t> take_spread(const std::vector<std::size_t>& idx, std::size_t limit) {
  if (limit == 0 || idx.size() <= limit) return idx;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < limit; ++i) out.push_back(idx[i * idx.size() / limit]);
  return out;
}

metrics::MetricReport evaluate(const EditModel<float>& model, const DatasetCache& data,
                               const EvalOptions& opts,
                               const PromptEncoder<float>& feature_encoder) {
  metrics::MetricReport rep;
  rep.method = opts.method;
  rep.split = opts.split;
  rep.metrics = {{"MSE", true}, {"CLIP-I", false}};
  rep.notes.push_back(
      "CLIP-I is the cosine of mean-pooled features from the trained, frozen toy prompt encoder");
  const auto features = [&feature_encoder](const Image& img) {
    ad::NoGradGuard no_grad;
    return feature_encoder.pooled_features(img);
  };
  for (std::size_t idx : take_spread(data.eval_indices(opts.split), opts.max_instances)) {
    const auto& inst = data.manifest.instances[idx];
    const auto& task = data.manifest.tasks[inst.task_id];
    const EditSample s = data.sample(inst);
    Image pred;
    if (opts.oracle) {
      pred = s.target;
    } else {
      SampleRequest req;
      req.prompt = s.prompt;
      req.reference = s.reference;
      req.source = s.source;
      req.instruction = s.instruction;
      req.steps = opts.steps;
      req.guidance = opts.guidance;
      req.alpha = opts.alpha;
      req.seed = instance_seed(opts.seed, idx);
      // Scored on the 8-bit image that would be written to disk.
      pred = quantize(sample(model, req));
    }
    metrics::InstanceScore sc;
    sc.task_id = inst.task_id;
    sc.task = task.name;
    sc.category = category_name(task.category);
    sc.seen = task.seen;
    sc.values["MSE"] = metrics::mse(pred, s.target);
    sc.values["CLIP-I"] = metrics::clip_i(pred, s.target, features);
    rep.instances.push_back(std::move(sc));
  }
  rep.aggregate();
  return rep;
}

double blind_bound(const DatasetCache& data, const std::vector<std::size_t>& instances) {
  if (instances.empty()) throw std::invalid_argument("blind_bound: no instances");
  std::size_t identity = 0;
  for (std::size_t i : instances) {
    const auto& name = data.manifest.tasks[data.manifest.instances[i].task_id].name;
    if (name != "identity" && name != "invert") {
      throw std::invalid_argument("blind_bound applies to identity/invert mixtures only, found '" +
                                  name + "'");
    }
    identity += name == "identity";
  }
  const double p = double(identity) / double(instances.size());
  double total = 0.0;
  for (std::size_t i : instances) {
    const auto& src = data.sample(i).source;
    double s = 0.0;
    for (float v : src.pixels) s += (double(v) - 0.5) * (double(v) - 0.5);
    total += 4.0 * p * (1.0 - p) * s / double(src.pixels.size());
  }
  return total / double(instances.size());
}

}  // namespace xedit::harness
