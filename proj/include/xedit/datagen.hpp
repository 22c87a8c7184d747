#pragma once
// Procedural edit-pair dataset: base scenes, deterministic edit operators,
// exemplar/query instance assembly, manifest I/O.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "xedit/image.hpp"

namespace xedit {

enum class OpCategory { low_level, style, editing, custom };
inline constexpr std::size_t kOpCategories = 4;

const char* category_name(OpCategory c);
OpCategory parse_category(const std::string& s);

struct EditOpInfo {
  std::string name;
  OpCategory category;
  std::string right_description;  // caption template for the edited image
  std::string instruction_text;
};

/// Registry order is fixed; instruction id of an op is its index + 1
/// (id 0 is EMPTY).
const std::vector<EditOpInfo>& op_registry();
/// Throws std::invalid_argument for an unknown name.
std::size_t op_index(const std::string& name);
inline std::size_t instruction_vocab() { return op_registry().size() + 1; }

/// Ops work on 8-bit levels; the input is quantized first and the output
/// lies on the 8-bit grid.
Image apply_edit_op(const std::string& name, const Image& image);

/// 3 to 8 rectangles and circles over a two-color linear gradient, 8-bit
/// quantized. Requires H, W >= 8.
Image render_base_image(std::uint64_t seed, std::size_t height, std::size_t width);

enum class Permutation { full, cyclic };
const char* permutation_name(Permutation p);
Permutation parse_permutation(const std::string& s);

/// (prompt pair, query pair) index combinations for one task.
/// full:   all ordered pairs with distinct indices; when there are more than
///         `cap`, a seeded shuffle picks `cap` of them (returned sorted).
/// cyclic: query i is prompted by pair (i - 1) mod n, truncated to `cap`.
std::vector<std::pair<std::size_t, std::size_t>> enumerate_instances(std::size_t n, std::size_t cap,
                                                                     Permutation mode,
                                                                     std::uint64_t seed,
                                                                     std::size_t task_id);

struct DatasetConfig {
  std::vector<std::string> seen_ops = {"invert",       "grayscale",   "brighten", "channel_permute",
                                       "box_blur3",    "binarize",    "sobel_edges", "hflip",
                                       "posterize",    "red_tint"};
  std::vector<std::string> unseen_ops = {"darken", "green_tint"};
  std::size_t pairs_per_task = 16;
  std::size_t cap = 64;
  Permutation permutation = Permutation::full;
  std::size_t holdout_pairs = 2;  // per seen task; queries from these pairs are eval-only
  std::uint64_t seed = 1000;
  std::size_t height = 16;
  std::size_t width = 16;
  bool instructions = true;  // false: every instance uses the EMPTY id
  bool shared_images = false;  // true: pair k of every task edits the same base image
  std::size_t workers = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct Annotation {
  std::string left_image_description;
  std::string right_image_description;
  std::string edit_instruction;
};

struct TaskRecord {
  std::size_t task_id = 0;
  std::string name;
  OpCategory category = OpCategory::low_level;
  bool seen = true;
  std::size_t instruction = 0;
  std::vector<std::pair<std::string, std::string>> pairs;  // relative (src, tar) paths
  Annotation annotation;
};

struct InstanceRecord {
  std::size_t task_id = 0;
  std::size_t prompt_pair = 0;
  std::size_t query_pair = 0;
  std::size_t instruction = 0;
  std::string split;  // "train", "eval" or "unused"
};

struct Manifest {
  std::filesystem::path root;
  std::uint64_t seed = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  Permutation permutation = Permutation::full;
  std::size_t cap = 0;
  std::size_t pairs_per_task = 0;
  std::size_t holdout_pairs = 0;
  bool shared_images = false;
  std::vector<TaskRecord> tasks;
  std::vector<InstanceRecord> instances;

  const TaskRecord& task(std::size_t id) const;
  std::size_t count_split(const std::string& split) const;
  bool operator==(const Manifest&) const;
};

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Task/instance layout without touching the filesystem.
Manifest plan_dataset(const DatasetConfig& cfg);

/// Renders and writes every pair plus manifest.json under `root`.
Manifest build_dataset(const DatasetConfig& cfg, const std::filesystem::path& root);

void write_manifest(const Manifest& m, const std::filesystem::path& path);

/// Parses and validates manifest.json (or a dataset directory); checks that
/// every referenced image exists and has the declared resolution. Errors
/// carry the offending path.
Manifest load_manifest(const std::filesystem::path& path);

/// Per-category task and instance counts as aligned text.
std::string dataset_summary(const Manifest& m);

}  // namespace xedit
