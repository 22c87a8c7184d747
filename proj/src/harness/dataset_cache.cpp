#include "xedit/harness/dataset_cache.hpp"

namespace xedit::harness {

DatasetCache DatasetCache::load(const std::filesystem::path& root) {
  DatasetCache c;
  c.manifest = load_manifest(root);
  for (const auto& t : c.manifest.tasks) {
    std::vector<std::pair<Image, Image>> pairs;
    for (const auto& [src, tar] : t.pairs) {
      pairs.emplace_back(read_ppm(c.manifest.root / src), read_ppm(c.manifest.root / tar));
    }
    c.pairs.push_back(std::move(pairs));
  }
  return c;
}

EditSample DatasetCache::sample(const InstanceRecord& inst) const {
  const auto& task_pairs = pairs.at(inst.task_id);
  EditSample s;
  s.prompt = task_pairs.at(inst.prompt_pair).first;
  s.reference = task_pairs.at(inst.prompt_pair).second;
  s.source = task_pairs.at(inst.query_pair).first;
  s.target = task_pairs.at(inst.query_pair).second;
  s.instruction = inst.instruction;
  return s;
}

std::vector<std::size_t> DatasetCache::split_indices(const std::string& split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.instances.size(); ++i)
    if (manifest.instances[i].split == split) out.push_back(i);
  return out;
}

std::vector<std::size_t> DatasetCache::eval_indices(const std::string& which) const {
  if (which != "seen" && which != "unseen" && which != "all") {
    throw std::invalid_argument("split must be seen, unseen or all, got '" + which + "'");
  }
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.instances.size(); ++i) {
    const auto& inst = manifest.instances[i];
    if (inst.split != "eval") continue;
    const bool seen = manifest.tasks[inst.task_id].seen;
    if (which == "all" || (which == "seen") == seen) out.push_back(i);
  }
  return out;
}

}  // namespace xedit::harness
