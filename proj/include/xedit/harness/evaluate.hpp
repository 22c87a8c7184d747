#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xedit/editor.hpp"
#include "xedit/harness/dataset_cache.hpp"
#include "xedit/metrics.hpp"

namespace xedit::harness {

struct EvalOptions {
  std::string split = "seen";  // seen | unseen | all
  std::string method = "model";
  std::size_t steps = 24;
  double guidance = 0.0;
  double alpha = 1.0;
  std::uint64_t seed = 1000;
  std::size_t max_instances = 0;  // 0 = every eval instance of the split
  bool oracle = false;            // score ground-truth targets instead of samples
};

/// Per-instance sampling seed: independent of evaluation order.
std::uint64_t instance_seed(std::uint64_t seed, std::size_t instance_index);

/// Evenly spaced subset of at most `limit` entries (all when limit is 0).
std::vector<std::size_t> take_spread(const std::vector<std::size_t>& idx, std::size_t limit);

/// Samples every selected eval instance and scores MSE and CLIP-I. The
/// CLIP-I features come from `feature_encoder` (mean-pooled tokens).
metrics::MetricReport evaluate(const EditModel<float>& model, const DatasetCache& data,
                               const EvalOptions& opts,
                               const PromptEncoder<float>& feature_encoder);

/// Best achievable MSE for a predictor that ignores the exemplar pair on an
/// {identity, invert} task mixture: mean over eval instances of
/// 4 p (1 - p) (s - 1/2)^2 per channel, with p the identity share.
double blind_bound(const DatasetCache& data, const std::vector<std::size_t>& instances);

}  // namespace xedit::harness
