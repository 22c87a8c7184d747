#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "xedit/datagen.hpp"
#include "xedit/editor.hpp"

namespace xedit::harness {

/// A loaded manifest with every pair image decoded in memory.
struct DatasetCache {
  Manifest manifest;
  std::vector<std::vector<std::pair<Image, Image>>> pairs;  // [task][pair] -> (src, tar)

  static DatasetCache load(const std::filesystem::path& root);

  EditSample sample(const InstanceRecord& inst) const;
  EditSample sample(std::size_t instance_index) const { return sample(manifest.instances.at(instance_index)); }

  /// Indices of instances in the given split ("train", "eval").
  std::vector<std::size_t> split_indices(const std::string& split) const;
  /// Eval instances of seen ("seen") or unseen ("unseen") tasks; "all" for both.
  std::vector<std::size_t> eval_indices(const std::string& which) const;
};

}  // namespace xedit::harness
