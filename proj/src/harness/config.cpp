#include "xedit/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace xedit::harness {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string fmt(std::size_t v) { return std::to_string(v); }
std::string fmt_u64(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

struct Field {
  const char* key;
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

#define XEDIT_SIZE(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_size(v); }, [](const Config& c) { return fmt(c.MEMBER); }}
#define XEDIT_U64(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_u64(v); }, [](const Config& c) { return fmt_u64(c.MEMBER); }}
#define XEDIT_DOUBLE(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_double(v); }, [](const Config& c) { return fmt(c.MEMBER); }}
#define XEDIT_BOOL(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_bool(v); }, [](const Config& c) { return fmt(c.MEMBER); }}
#define XEDIT_LIST(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = parse_list(v); }, [](const Config& c) { return fmt(c.MEMBER); }}
#define XEDIT_STRING(KEY, MEMBER) \
  {KEY, [](Config& c, const std::string& v) { c.MEMBER = v; }, [](const Config& c) { return c.MEMBER; }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      XEDIT_SIZE("model.d_model", model.backbone.d_model),
      XEDIT_SIZE("model.blocks", model.backbone.blocks),
      XEDIT_SIZE("model.heads", model.backbone.heads),
      XEDIT_SIZE("model.patch", model.backbone.patch),
      XEDIT_SIZE("model.height", model.backbone.height),
      XEDIT_SIZE("model.width", model.backbone.width),
      XEDIT_SIZE("model.mlp_ratio", model.backbone.mlp_ratio),
      XEDIT_SIZE("model.freq_dim", model.backbone.freq_dim),
      {"model.prediction",
       [](Config& c, const std::string& v) {
         try {
           c.model.prediction = parse_prediction(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       },
       [](const Config& c) { return std::string(prediction_name(c.model.prediction)); }},
      XEDIT_DOUBLE("model.t_floor", model.t_floor),
      XEDIT_BOOL("model.text_modulation", model.backbone.text_modulation),
      XEDIT_SIZE("adapter.n_adapter", model.adapter.n_adapter),
      XEDIT_DOUBLE("adapter.alpha", model.adapter.alpha),
      {"adapter.conditioning",
       [](Config& c, const std::string& v) {
         try {
           c.model.conditioning = parse_conditioning(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       },
       [](const Config& c) { return std::string(conditioning_name(c.model.conditioning)); }},
      XEDIT_SIZE("lora.rank", lora_rank),
      XEDIT_DOUBLE("lora.scale", lora_scale),
      XEDIT_DOUBLE("train.lr", train.lr),
      XEDIT_SIZE("train.steps", train.steps),
      XEDIT_SIZE("train.batch", train.batch),
      XEDIT_DOUBLE("train.p_drop", train.p_drop),
      XEDIT_U64("train.seed", train.seed),
      XEDIT_DOUBLE("train.weight_decay", train.weight_decay),
      XEDIT_STRING("train.lr_schedule", train.lr_schedule),
      XEDIT_SIZE("train.warmup", train.warmup),
      XEDIT_STRING("train.loss_weight", train.loss_weight),
      XEDIT_SIZE("train.checkpoint_every", train.checkpoint_every),
      XEDIT_BOOL("train.train_base", train.train_base),
      XEDIT_BOOL("train.lora_only", train.lora_only),
      XEDIT_LIST("train.unfreeze", train.unfreeze),
      XEDIT_STRING("train.base_checkpoint", train.base_checkpoint),
      XEDIT_SIZE("sampler.steps", sampler.steps),
      XEDIT_DOUBLE("sampler.guidance", sampler.guidance),
      XEDIT_U64("sampler.seed", sampler.seed),
      XEDIT_SIZE("eval.max_instances", eval.max_instances),
      XEDIT_LIST("dataset.seen", dataset.seen_ops),
      XEDIT_LIST("dataset.unseen", dataset.unseen_ops),
      XEDIT_SIZE("dataset.pairs_per_task", dataset.pairs_per_task),
      XEDIT_SIZE("dataset.cap", dataset.cap),
      {"dataset.permutation",
       [](Config& c, const std::string& v) {
         try {
           c.dataset.permutation = parse_permutation(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(e.what());
         }
       },
       [](const Config& c) { return std::string(permutation_name(c.dataset.permutation)); }},
      XEDIT_SIZE("dataset.holdout_pairs", dataset.holdout_pairs),
      XEDIT_U64("dataset.seed", dataset.seed),
      XEDIT_BOOL("dataset.instructions", dataset.instructions),
      XEDIT_BOOL("dataset.shared_images", dataset.shared_images),
      XEDIT_SIZE("dataset.workers", dataset.workers),
      XEDIT_STRING("paths.dataset", dataset_path),
      XEDIT_STRING("paths.run", run_path),
  };
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return &f;
  return nullptr;
}

// Dataset images always match the model resolution.
void sync(Config& c) {
  c.dataset.height = c.model.backbone.height;
  c.dataset.width = c.model.backbone.width;
  c.model.backbone.vocab = instruction_vocab();
}

}  // namespace

void Config::validate() const {
  try {
    model.backbone.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[model] ") + e.what());
  }
  try {
    dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("[dataset] ") + e.what());
  }
  if (model.adapter.n_adapter == 0) throw ConfigError("[adapter] n_adapter must be at least 1");
  if (!(model.adapter.alpha >= 0.0)) throw ConfigError("[adapter] alpha must be non-negative");
  if (!(model.t_floor > 0.0 && model.t_floor <= 1.0)) throw ConfigError("[model] t_floor must be in (0, 1]");
  if (train.train_base == train.lora_only) {
    throw ConfigError(
        "[train] exactly one training regime must be selected: set either train_base = true or "
        "lora_only = true");
  }
  if (train.lora_only) {
    const std::size_t d = model.backbone.d_model;
    if (lora_rank < 1 || lora_rank > d) {
      throw ConfigError("[lora] rank must be in [1, d_model] when lora_only = true");
    }
  }
  if (!train.unfreeze.empty() && !train.lora_only) {
    throw ConfigError("[train] unfreeze only applies when lora_only = true");
  }
  if (!train.base_checkpoint.empty() && !train.lora_only) {
    throw ConfigError("[train] base_checkpoint only applies when lora_only = true");
  }
  if (!(train.lr > 0.0)) throw ConfigError("[train] lr must be positive");
  if (train.lr_schedule != "constant" && train.lr_schedule != "cosine") {
    throw ConfigError("[train] lr_schedule must be constant or cosine, got '" + train.lr_schedule + "'");
  }
  if (train.loss_weight != "velocity" && train.loss_weight != "clean") {
    throw ConfigError("[train] loss_weight must be velocity or clean, got '" + train.loss_weight + "'");
  }
  if (train.warmup > train.steps) throw ConfigError("[train] warmup exceeds steps");
  if (train.steps < 1) throw ConfigError("[train] steps must be at least 1");
  if (train.batch < 1) throw ConfigError("[train] batch must be at least 1");
  if (!(train.p_drop >= 0.0 && train.p_drop <= 1.0)) throw ConfigError("[train] p_drop must be in [0, 1]");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("[train] weight_decay must be non-negative");
  if (sampler.steps < 1) throw ConfigError("[sampler] steps must be at least 1");
  if (!(sampler.guidance >= 0.0)) throw ConfigError("[sampler] guidance must be non-negative");
  if (dataset_path.empty()) throw ConfigError("[paths] dataset must not be empty");
  if (run_path.empty()) throw ConfigError("[paths] run must not be empty");
}

Config parse_config(const std::string& text, const std::string& origin) {
  Config cfg;
  std::set<std::string> seen;
  std::string section;
  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(is, raw)) {
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      const bool known = std::any_of(fields().begin(), fields().end(), [&](const Field& f) {
        return std::string(f.key).rfind(section + ".", 0) == 0;
      });
      if (!known) throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    if (section.empty()) throw ConfigError(where + ": key outside of any [section]");
    const std::string key = section + "." + trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (!f) throw ConfigError(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + key + ": " + e.what());
    }
  }
  sync(cfg);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_entries(const Config& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::string to_text(const Config& cfg) {
  std::string out, section;
  for (const auto& [key, value] : config_entries(cfg)) {
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "" : "\n") + ("[" + s + "]\n");
      section = s;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  }
  return out;
}

Config from_entries(const std::map<std::string, std::string>& entries) {
  Config cfg;
  for (const auto& [key, value] : entries) {
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown key '" + key + "'");
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }
  sync(cfg);
  cfg.validate();
  return cfg;
}

}  // namespace xedit::harness
