#include "xedit/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "xedit/rng.hpp"

namespace xedit {

namespace fs = std::filesystem;
using nlohmann::json;

const char* category_name(OpCategory c) {
  switch (c) {
    case OpCategory::low_level: return "low_level";
    case OpCategory::style: return "style";
    case OpCategory::editing: return "editing";
    case OpCategory::custom: return "custom";
  }
  return "?";
}

OpCategory parse_category(const std::string& s) {
  for (auto c : {OpCategory::low_level, OpCategory::style, OpCategory::editing, OpCategory::custom}) {
    if (s == category_name(c)) return c;
  }
  throw std::invalid_argument("unknown task category '" + s + "'");
}

const std::vector<EditOpInfo>& op_registry() {
  static const std::vector<EditOpInfo> ops = {
      {"invert", OpCategory::style, "The same scene with every color inverted.",
       "Invert all colors."},
      {"grayscale", OpCategory::low_level, "The same scene rendered in shades of gray.",
       "Convert the image to grayscale."},
      {"brighten", OpCategory::editing, "The same scene, noticeably brighter.",
       "Increase the brightness."},
      {"channel_permute", OpCategory::style,
       "The same scene with red, green and blue channels rotated.",
       "Rotate the color channels from RGB to GBR."},
      {"box_blur3", OpCategory::low_level, "A softly blurred version of the same scene.",
       "Blur the image with a 3x3 box filter."},
      {"binarize", OpCategory::low_level, "The same scene reduced to fully saturated colors.",
       "Threshold each channel at one half."},
      {"sobel_edges", OpCategory::low_level, "A gray edge map of the same scene on black.",
       "Extract the edge map."},
      {"hflip", OpCategory::editing, "The same scene mirrored left to right.",
       "Flip the image horizontally."},
      {"posterize", OpCategory::style, "The same scene with four tone levels per channel.",
       "Posterize to four levels."},
      {"red_tint", OpCategory::style, "The same scene washed with a red tint.",
       "Apply a red tint."},
      {"identity", OpCategory::low_level, "An unchanged copy of the scene.", "Keep the image as is."},
      {"darken", OpCategory::editing, "The same scene, noticeably darker.",
       "Decrease the brightness."},
      {"green_tint", OpCategory::style, "The same scene washed with a green tint.",
       "Apply a green tint."},
      {"vflip", OpCategory::editing, "The same scene mirrored top to bottom.",
       "Flip the image vertically."},
      {"stamp", OpCategory::custom, "The same scene with a white cross emblem in the middle.",
       "Place the white cross emblem at the center."},
  };
  return ops;
}

std::size_t op_index(const std::string& name) {
  const auto& ops = op_registry();
  for (std::size_t i = 0; i < ops.size(); ++i) {
    if (ops[i].name == name) return i;
  }
  throw std::invalid_argument("unknown edit op '" + name + "'");
}

namespace {

using Bytes = std::vector<int>;  // H*W*3 levels in [0, 255]

Bytes to_levels(const Image& img) {
  Bytes b(img.pixels.size());
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = to_byte(img.pixels[i]);
  return b;
}

Image from_levels(const Bytes& b, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t i = 0; i < b.size(); ++i) {
    img.pixels[i] = from_byte(static_cast<unsigned char>(std::clamp(b[i], 0, 255)));
  }
  return img;
}

int luma(const Bytes& b, std::size_t i) {
  return (299 * b[i] + 587 * b[i + 1] + 114 * b[i + 2] + 500) / 1000;
}

template <class F>
Bytes per_channel(const Bytes& in, F f) {
  Bytes out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return out;
}

}  // namespace

Image apply_edit_op(const std::string& name, const Image& image) {
  const std::size_t op = op_index(name);
  const std::size_t h = image.height, w = image.width;
  const Bytes in = to_levels(image);
  Bytes out;
  auto px = [w](std::size_t y, std::size_t x) { return (y * w + x) * 3; };
  auto clamped = [h, w, &px](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return px(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  const std::string& n = op_registry()[op].name;
  if (n == "invert") {
    out = per_channel(in, [](int v) { return 255 - v; });
  } else if (n == "grayscale") {
    out = in;
    for (std::size_t i = 0; i < in.size(); i += 3) out[i] = out[i + 1] = out[i + 2] = luma(in, i);
  } else if (n == "brighten") {
    out = per_channel(in, [](int v) { return std::min(255, v + 40); });
  } else if (n == "darken") {
    out = per_channel(in, [](int v) { return std::max(0, v - 40); });
  } else if (n == "channel_permute") {
    out = in;
    for (std::size_t i = 0; i < in.size(); i += 3) {
      out[i] = in[i + 1];
      out[i + 1] = in[i + 2];
      out[i + 2] = in[i];
    }
  } else if (n == "box_blur3") {
    out.assign(in.size(), 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          int s = 0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) s += in[clamped(long(y) + dy, long(x) + dx) + c];
          out[px(y, x) + c] = (s + 4) / 9;
        }
  } else if (n == "binarize") {
    out = per_channel(in, [](int v) { return v >= 128 ? 255 : 0; });
  } else if (n == "sobel_edges") {
    out.assign(in.size(), 0);
    auto l = [&](long y, long x) { return luma(in, clamped(y, x)); };
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const long yy = long(y), xx = long(x);
        const int gx = (l(yy - 1, xx + 1) + 2 * l(yy, xx + 1) + l(yy + 1, xx + 1)) -
                       (l(yy - 1, xx - 1) + 2 * l(yy, xx - 1) + l(yy + 1, xx - 1));
        const int gy = (l(yy + 1, xx - 1) + 2 * l(yy + 1, xx) + l(yy + 1, xx + 1)) -
                       (l(yy - 1, xx - 1) + 2 * l(yy - 1, xx) + l(yy - 1, xx + 1));
        const double mag = std::sqrt(double(gx) * gx + double(gy) * gy) / 4.0;
        const int v = std::min(255, static_cast<int>(std::lround(mag)));
        const auto i = px(y, x);
        out[i] = out[i + 1] = out[i + 2] = v;
      }
  } else if (n == "hflip" || n == "vflip") {
    out.assign(in.size(), 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto src = n == "hflip" ? px(y, w - 1 - x) : px(h - 1 - y, x);
        for (std::size_t c = 0; c < 3; ++c) out[px(y, x) + c] = in[src + c];
      }
  } else if (n == "posterize") {
    out = per_channel(in, [](int v) { return (v * 4 / 256) * 85; });
  } else if (n == "red_tint" || n == "green_tint") {
    const std::size_t ch = n == "red_tint" ? 0 : 1;
    out = in;
    for (std::size_t i = ch; i < in.size(); i += 3) out[i] = (in[i] + 256) / 2;
  } else if (n == "identity") {
    out = in;
  } else if (n == "stamp") {
    out = in;
    const std::size_t cy = h / 2, cx = w / 2, arm = std::max<std::size_t>(1, std::min(h, w) / 8);
    for (std::size_t d = 0; d <= 2 * arm; ++d) {
      const std::size_t yy = cy - arm + d, xx = cx - arm + d;
      for (std::size_t c = 0; c < 3; ++c) {
        out[px(yy, cx) + c] = 255;
        out[px(cy, xx) + c] = 255;
      }
    }
  }
  return from_levels(out, h, w);
}

Image render_base_image(std::uint64_t seed, std::size_t height, std::size_t width) {
  if (height < 8 || width < 8) {
    throw std::invalid_argument("base images must be at least 8x8, got " + std::to_string(height) +
                                "x" + std::to_string(width));
  }
  Rng rng = Rng::stream(seed, "datagen.render");
  auto color = [&rng] {
    return std::array<double, 3>{rng.uniform(), rng.uniform(), rng.uniform()};
  };
  const auto c0 = color();
  const auto c1 = color();
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double gx = std::cos(angle), gy = std::sin(angle);
  Image img(height, width);
  const double hx = double(width - 1), hy = double(height - 1);
  // Projection of the pixel onto the gradient direction, normalised to [0, 1].
  const double lo = std::min(0.0, gx * hx) + std::min(0.0, gy * hy);
  const double hi = std::max(0.0, gx * hx) + std::max(0.0, gy * hy);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double s = hi > lo ? (gx * double(x) + gy * double(y) - lo) / (hi - lo) : 0.0;
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = float(c0[c] + (c1[c] - c0[c]) * s);
    }
  const std::size_t shapes = 3 + static_cast<std::size_t>(rng.below(6));
  for (std::size_t k = 0; k < shapes; ++k) {
    const bool circle = rng.uniform() < 0.5;
    const auto col = color();
    if (circle) {
      const double cx = rng.uniform(0.0, double(width)), cy = rng.uniform(0.0, double(height));
      const double r = rng.uniform(1.5, double(std::min(height, width)) / 3.0);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const double dx = double(x) + 0.5 - cx, dy = double(y) + 0.5 - cy;
          if (dx * dx + dy * dy <= r * r)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = float(col[c]);
        }
    } else {
      const std::size_t x0 = rng.below(width), y0 = rng.below(height);
      const std::size_t rw = 2 + rng.below(width / 2), rh = 2 + rng.below(height / 2);
      for (std::size_t y = y0; y < std::min(height, y0 + rh); ++y)
        for (std::size_t x = x0; x < std::min(width, x0 + rw); ++x)
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = float(col[c]);
    }
  }
  return quantize(img);
}

const char* permutation_name(Permutation p) { return p == Permutation::full ? "full" : "cyclic"; }

Permutation parse_permutation(const std::string& s) {
  if (s == "full") return Permutation::full;
  if (s == "cyclic") return Permutation::cyclic;
  throw std::invalid_argument("unknown permutation mode '" + s + "' (expected full or cyclic)");
}

std::vector<std::pair<std::size_t, std::size_t>> enumerate_instances(std::size_t n, std::size_t cap,
                                                                     Permutation mode,
                                                                     std::uint64_t seed,
                                                                     std::size_t task_id) {
  if (n < 2) throw std::invalid_argument("pairs_per_task must be at least 2");
  if (cap < 1) throw std::invalid_argument("cap must be at least 1");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (mode == Permutation::cyclic) {
    for (std::size_t q = 0; q < n && out.size() < cap; ++q) out.emplace_back((q + n - 1) % n, q);
    return out;
  }
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q = 0; q < n; ++q)
      if (p != q) out.emplace_back(p, q);
  if (out.size() > cap) {
    Rng rng = Rng::stream(seed, "datagen.select", task_id);
    for (std::size_t i = out.size() - 1; i > 0; --i) std::swap(out[i], out[rng.below(i + 1)]);
    out.resize(cap);
    std::sort(out.begin(), out.end());
  }
  return out;
}

void DatasetConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (pairs_per_task < 2) fail("pairs_per_task must be at least 2");
  if (cap < 1) fail("cap must be at least 1");
  if (holdout_pairs >= pairs_per_task) fail("holdout_pairs must be smaller than pairs_per_task");
  if (height < 8 || width < 8) fail("dataset resolution must be at least 8x8");
  if (seen_ops.empty() && unseen_ops.empty()) fail("dataset lists no tasks");
  if (workers < 1) fail("workers must be at least 1");
  std::set<std::string> names;
  for (const auto* list : {&seen_ops, &unseen_ops})
    for (const auto& op : *list) {
      op_index(op);
      if (!names.insert(op).second) fail("task '" + op + "' listed twice");
    }
}

const TaskRecord& Manifest::task(std::size_t id) const {
  if (id >= tasks.size() || tasks[id].task_id != id) {
    throw DatasetError("manifest has no task with id " + std::to_string(id));
  }
  return tasks[id];
}

std::size_t Manifest::count_split(const std::string& split) const {
  return static_cast<std::size_t>(std::count_if(instances.begin(), instances.end(),
                                                [&](const auto& i) { return i.split == split; }));
}

namespace {

bool same_task(const TaskRecord& a, const TaskRecord& b) {
  return a.task_id == b.task_id && a.name == b.name && a.category == b.category &&
         a.seen == b.seen && a.instruction == b.instruction && a.pairs == b.pairs &&
         a.annotation.left_image_description == b.annotation.left_image_description &&
         a.annotation.right_image_description == b.annotation.right_image_description &&
         a.annotation.edit_instruction == b.annotation.edit_instruction;
}

bool same_instance(const InstanceRecord& a, const InstanceRecord& b) {
  return a.task_id == b.task_id && a.prompt_pair == b.prompt_pair && a.query_pair == b.query_pair &&
         a.instruction == b.instruction && a.split == b.split;
}

constexpr const char* kLeftDescription =
    "A synthetic scene of flat-colored rectangles and circles over a two-color gradient.";

std::string pair_path(std::size_t task, std::size_t k, const char* role) {
  return "task_" + std::to_string(task) + "/pair_" + std::to_string(k) + "_" + role + ".ppm";
}

}  // namespace

bool Manifest::operator==(const Manifest& o) const {
  if (seed != o.seed || height != o.height || width != o.width || permutation != o.permutation ||
      cap != o.cap || pairs_per_task != o.pairs_per_task || holdout_pairs != o.holdout_pairs ||
      shared_images != o.shared_images || tasks.size() != o.tasks.size() || instances.size() != o.instances.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (!same_task(tasks[i], o.tasks[i])) return false;
  for (std::size_t i = 0; i < instances.size(); ++i)
    if (!same_instance(instances[i], o.instances[i])) return false;
  return true;
}

Manifest plan_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Manifest m;
  m.seed = cfg.seed;
  m.height = cfg.height;
  m.width = cfg.width;
  m.permutation = cfg.permutation;
  m.cap = cfg.cap;
  m.pairs_per_task = cfg.pairs_per_task;
  m.holdout_pairs = cfg.holdout_pairs;
  m.shared_images = cfg.shared_images;
  std::vector<std::pair<std::string, bool>> order;
  for (const auto& s : cfg.seen_ops) order.emplace_back(s, true);
  for (const auto& s : cfg.unseen_ops) order.emplace_back(s, false);
  const std::size_t n = cfg.pairs_per_task;
  for (std::size_t id = 0; id < order.size(); ++id) {
    const auto& [name, seen] = order[id];
    const auto& info = op_registry()[op_index(name)];
    TaskRecord t;
    t.task_id = id;
    t.name = name;
    t.category = info.category;
    t.seen = seen;
    t.instruction = cfg.instructions ? op_index(name) + 1 : 0;
    for (std::size_t k = 0; k < n; ++k) t.pairs.emplace_back(pair_path(id, k, "src"), pair_path(id, k, "tar"));
    t.annotation = {kLeftDescription, info.right_description, info.instruction_text};
    for (auto [p, q] : enumerate_instances(n, cfg.cap, cfg.permutation, cfg.seed, id)) {
      InstanceRecord r{id, p, q, t.instruction, "train"};
      const std::size_t first_holdout = n - cfg.holdout_pairs;
      if (!seen || q >= first_holdout) {
        r.split = "eval";
      } else if (p >= first_holdout) {
        r.split = "unused";  // would leak a held-out pair into training
      }
      m.instances.push_back(r);
    }
    m.tasks.push_back(std::move(t));
  }
  return m;
}

namespace {

void write_task_images(const DatasetConfig& cfg, const TaskRecord& t, const fs::path& root) {
  fs::create_directories(root / ("task_" + std::to_string(t.task_id)));
  for (std::size_t k = 0; k < t.pairs.size(); ++k) {
    const std::uint64_t task_key = cfg.shared_images ? 0 : std::uint64_t(t.task_id) << 32;
    const std::uint64_t image_seed = mix64(cfg.seed ^ mix64(task_key | std::uint64_t(k)));
    const Image src = render_base_image(image_seed, cfg.height, cfg.width);
    write_ppm(root / t.pairs[k].first, src);
    write_ppm(root / t.pairs[k].second, apply_edit_op(t.name, src));
  }
}

json to_json(const Manifest& m) {
  json j;
  j["format"] = "xedit-dataset";
  j["version"] = 1;
  j["seed"] = m.seed;
  j["resolution"] = {{"height", m.height}, {"width", m.width}};
  j["permutation"] = permutation_name(m.permutation);
  j["cap"] = m.cap;
  j["pairs_per_task"] = m.pairs_per_task;
  j["holdout_pairs"] = m.holdout_pairs;
  j["shared_images"] = m.shared_images;
  j["counts"] = {{"tasks", m.tasks.size()}, {"instances", m.instances.size()}};
  j["tasks"] = json::array();
  for (const auto& t : m.tasks) {
    json pairs = json::array();
    for (const auto& [s, r] : t.pairs) pairs.push_back({{"src", s}, {"tar", r}});
    j["tasks"].push_back({{"task_id", t.task_id},
                          {"name", t.name},
                          {"category", category_name(t.category)},
                          {"seen", t.seen},
                          {"instruction", t.instruction},
                          {"pairs", pairs},
                          {"annotation",
                           {{"left_image_description", t.annotation.left_image_description},
                            {"right_image_description", t.annotation.right_image_description},
                            {"edit_instruction", t.annotation.edit_instruction}}}});
  }
  j["instances"] = json::array();
  for (const auto& i : m.instances) {
    j["instances"].push_back({{"task_id", i.task_id},
                              {"prompt_pair", i.prompt_pair},
                              {"query_pair", i.query_pair},
                              {"instruction", i.instruction},
                              {"split", i.split}});
  }
  return j;
}

}  // namespace

void write_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetError("cannot write manifest '" + path.string() + "'");
  os << to_json(m).dump(2) << '\n';
  if (!os) throw DatasetError("write failed for '" + path.string() + "'");
}

Manifest build_dataset(const DatasetConfig& cfg, const fs::path& root) {
  Manifest m = plan_dataset(cfg);
  m.root = root;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DatasetError("cannot create dataset root '" + root.string() + "': " + ec.message());

  // Each task only touches its own directory and its own RNG streams, so the
  // tree does not depend on the worker count.
  const std::size_t workers = std::min(cfg.workers, m.tasks.size());
  std::vector<std::exception_ptr> errors(m.tasks.size());
  auto run = [&](std::size_t w) {
    for (std::size_t i = w; i < m.tasks.size(); i += workers) {
      try {
        write_task_images(cfg, m.tasks[i], root);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  write_manifest(m, root / "manifest.json");
  return m;
}

namespace {

template <class V>
V field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw DatasetError(where + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw DatasetError(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

Manifest load_manifest(const fs::path& input) {
  const fs::path path = fs::is_directory(input) ? input / "manifest.json" : input;
  const std::string where = path.string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetError("cannot open manifest '" + where + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DatasetError(where + ": invalid JSON (" + e.what() + ")");
  }
  if (field<std::string>(j, "format", where) != "xedit-dataset") {
    throw DatasetError(where + ": not an xedit dataset manifest");
  }
  if (field<int>(j, "version", where) != 1) throw DatasetError(where + ": unsupported version");

  Manifest m;
  m.root = path.parent_path();
  m.seed = field<std::uint64_t>(j, "seed", where);
  const auto res = field<json>(j, "resolution", where);
  m.height = field<std::size_t>(res, "height", where + " resolution");
  m.width = field<std::size_t>(res, "width", where + " resolution");
  try {
    m.permutation = parse_permutation(field<std::string>(j, "permutation", where));
  } catch (const std::invalid_argument& e) {
    throw DatasetError(where + ": " + e.what());
  }
  m.cap = field<std::size_t>(j, "cap", where);
  m.pairs_per_task = field<std::size_t>(j, "pairs_per_task", where);
  m.holdout_pairs = field<std::size_t>(j, "holdout_pairs", where);
  m.shared_images = j.value("shared_images", false);

  const auto tasks = field<json>(j, "tasks", where);
  if (!tasks.is_array()) throw DatasetError(where + ": 'tasks' must be an array");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const std::string tw = where + " tasks[" + std::to_string(i) + "]";
    const auto& jt = tasks[i];
    TaskRecord t;
    t.task_id = field<std::size_t>(jt, "task_id", tw);
    if (t.task_id != i) throw DatasetError(tw + ": task ids must be 0..n-1 in order");
    t.name = field<std::string>(jt, "name", tw);
    try {
      t.category = parse_category(field<std::string>(jt, "category", tw));
    } catch (const std::invalid_argument& e) {
      throw DatasetError(tw + ": " + e.what());
    }
    t.seen = field<bool>(jt, "seen", tw);
    t.instruction = field<std::size_t>(jt, "instruction", tw);
    const auto pairs = field<json>(jt, "pairs", tw);
    if (!pairs.is_array()) throw DatasetError(tw + ": 'pairs' must be an array");
    for (const auto& jp : pairs) {
      t.pairs.emplace_back(field<std::string>(jp, "src", tw), field<std::string>(jp, "tar", tw));
    }
    const auto ann = field<json>(jt, "annotation", tw);
    t.annotation = {field<std::string>(ann, "left_image_description", tw),
                    field<std::string>(ann, "right_image_description", tw),
                    field<std::string>(ann, "edit_instruction", tw)};
    m.tasks.push_back(std::move(t));
  }

  const auto instances = field<json>(j, "instances", where);
  if (!instances.is_array()) throw DatasetError(where + ": 'instances' must be an array");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::string iw = where + " instances[" + std::to_string(i) + "]";
    const auto& ji = instances[i];
    InstanceRecord r;
    r.task_id = field<std::size_t>(ji, "task_id", iw);
    r.prompt_pair = field<std::size_t>(ji, "prompt_pair", iw);
    r.query_pair = field<std::size_t>(ji, "query_pair", iw);
    r.instruction = field<std::size_t>(ji, "instruction", iw);
    r.split = field<std::string>(ji, "split", iw);
    if (r.task_id >= m.tasks.size()) throw DatasetError(iw + ": unknown task id");
    const auto& t = m.tasks[r.task_id];
    if (r.prompt_pair >= t.pairs.size() || r.query_pair >= t.pairs.size() ||
        r.prompt_pair == r.query_pair) {
      throw DatasetError(iw + ": invalid pair indices");
    }
    if (r.split != "train" && r.split != "eval" && r.split != "unused") {
      throw DatasetError(iw + ": unknown split '" + r.split + "'");
    }
    if (!t.seen && r.split == "train") throw DatasetError(iw + ": unseen task in training split");
    m.instances.push_back(r);
  }

  const auto counts = field<json>(j, "counts", where);
  if (field<std::size_t>(counts, "tasks", where + " counts") != m.tasks.size() ||
      field<std::size_t>(counts, "instances", where + " counts") != m.instances.size()) {
    throw DatasetError(where + ": counts do not match the listed tasks/instances");
  }

  for (const auto& t : m.tasks)
    for (const auto& [s, r] : t.pairs)
      for (const auto& rel : {s, r}) {
        const fs::path p = m.root / rel;
        if (!fs::exists(p)) throw DatasetError("missing image '" + p.string() + "'");
        Image img;
        try {
          img = read_ppm(p);
        } catch (const ImageError& e) {
          throw DatasetError(e.what());
        }
        if (img.height != m.height || img.width != m.width) {
          throw DatasetError("image '" + p.string() + "' is " + std::to_string(img.height) + "x" +
                             std::to_string(img.width) + ", manifest declares " +
                             std::to_string(m.height) + "x" + std::to_string(m.width));
        }
      }
  return m;
}

std::string dataset_summary(const Manifest& m) {
  struct Row {
    std::size_t seen_tasks = 0, unseen_tasks = 0, train = 0, eval = 0, unused = 0;
  };
  std::map<int, Row> rows;
  for (const auto& t : m.tasks) {
    auto& r = rows[static_cast<int>(t.category)];
    (t.seen ? r.seen_tasks : r.unseen_tasks)++;
  }
  for (const auto& i : m.instances) {
    auto& r = rows[static_cast<int>(m.tasks[i.task_id].category)];
    if (i.split == "train") ++r.train;
    else if (i.split == "eval") ++r.eval;
    else ++r.unused;
  }
  std::ostringstream os;
  os << std::left << std::setw(11) << "category" << std::right << std::setw(6) << "seen"
     << std::setw(8) << "unseen" << std::setw(7) << "train" << std::setw(6) << "eval"
     << std::setw(8) << "unused" << '\n';
  Row total;
  for (const auto& [c, r] : rows) {
    os << std::left << std::setw(11) << category_name(static_cast<OpCategory>(c)) << std::right
       << std::setw(6) << r.seen_tasks << std::setw(8) << r.unseen_tasks << std::setw(7)
       << r.train << std::setw(6) << r.eval << std::setw(8) << r.unused << '\n';
    total.seen_tasks += r.seen_tasks;
    total.unseen_tasks += r.unseen_tasks;
    total.train += r.train;
    total.eval += r.eval;
    total.unused += r.unused;
  }
  os << std::left << std::setw(11) << "total" << std::right << std::setw(6) << total.seen_tasks
     << std::setw(8) << total.unseen_tasks << std::setw(7) << total.train << std::setw(6)
     << total.eval << std::setw(8) << total.unused << '\n';
  os << "instances: " << m.instances.size() << "  tasks: " << m.tasks.size() << '\n';
  return os.str();
}

}  // namespace xedit
