#include "xedit/harness/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace xedit::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "xedit-checkpoint";
constexpr int kVersion = 1;

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json header;
  header["format"] = kFormat;
  header["version"] = kVersion;
  header["config"] = ckpt.config;
  header["step"] = ckpt.step;
  header["rng"] = {{"algorithm", "xoshiro256**"}, {"seed", ckpt.seed}, {"next_step", ckpt.next_step}};
  header["adam_step"] = ckpt.adam_step;
  header["lora"] = ckpt.lora;
  json entries = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    if (ad::shape_numel(t.shape) != t.values.size()) {
      throw CheckpointError("tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                            " values for shape " + ad::shape_str(t.shape));
    }
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.values.size();
  }
  header["tensors"] = entries;
  header["payload_floats"] = offset;
  const std::string text = header.dump();

  std::string blob;
  put_u64_le(blob, text.size());
  blob += text;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& t : ckpt.tensors) {
    for (float f : t.values) {
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      char b[4];
      std::memcpy(b, &bits, 4);
      blob.append(b, 4);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // Write-then-rename so an interrupted save never leaves a torn file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open '" + tmp.string() + "' for writing");
    os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!os) throw CheckpointError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint '" + path.string() + "'";
  if (blob.size() < 8) throw CheckpointError(where + " is truncated");
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());
  const std::uint64_t hlen = get_u64_le(bytes);
  if (hlen > blob.size() - 8) throw CheckpointError(where + " has a corrupt header length");
  json header;
  try {
    header = json::parse(blob.substr(8, hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(where + ": invalid header (" + e.what() + ")");
  }
  Checkpoint ckpt;
  try {
    if (header.at("format") != kFormat) throw CheckpointError(where + " is not an xedit checkpoint");
    if (header.at("version") != kVersion) throw CheckpointError(where + ": unsupported version");
    ckpt.config = header.at("config").get<std::map<std::string, std::string>>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.seed = header.at("rng").at("seed").get<std::uint64_t>();
    ckpt.next_step = header.at("rng").at("next_step").get<std::uint64_t>();
    ckpt.adam_step = header.at("adam_step").get<std::int64_t>();
    ckpt.lora = header.at("lora").get<bool>();
    const std::uint64_t floats = header.at("payload_floats").get<std::uint64_t>();
    if (blob.size() - 8 - hlen != floats * 4) {
      throw CheckpointError(where + ": payload size does not match the header");
    }
    const unsigned char* payload = bytes + 8 + hlen;
    std::uint64_t expect = 0;
    for (const auto& e : header.at("tensors")) {
      CheckpointTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<ad::Shape>();
      const std::uint64_t off = e.at("offset").get<std::uint64_t>();
      const std::uint64_t n = ad::shape_numel(t.shape);
      if (off != expect || off + n > floats) {
        throw CheckpointError(where + ": tensor '" + t.name + "' does not tile the payload");
      }
      t.values.resize(n);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, payload + 4 * (off + i), 4);
        t.values[i] = std::bit_cast<float>(to_le(bits));
      }
      expect = off + n;
      ckpt.tensors.push_back(std::move(t));
    }
    if (expect != floats) throw CheckpointError(where + ": tensors do not cover the payload");
  } catch (const json::exception& e) {
    throw CheckpointError(where + ": malformed header (" + e.what() + ")");
  }
  return ckpt;
}

Checkpoint make_checkpoint(const Config& cfg, const EditModel<float>& model,
                           const ParamList<float>* trainable, const ad::AdamState<float>* adam,
                           std::uint64_t step) {
  Checkpoint c;
  for (const auto& [k, v] : config_entries(cfg)) c.config[k] = v;
  c.step = step;
  c.seed = cfg.train.seed;
  c.next_step = step + 1;
  c.lora = model.has_lora();
  for (const auto& p : model.parameters()) {
    c.tensors.push_back({p.name, p.tensor.shape(), {p.tensor.data().begin(), p.tensor.data().end()}});
  }
  if (adam && trainable) {
    if (adam->m.size() != trainable->size()) {
      throw CheckpointError("optimizer state does not match the trainable parameter list");
    }
    c.adam_step = adam->step;
    for (std::size_t i = 0; i < trainable->size(); ++i) {
      const auto& p = (*trainable)[i];
      c.tensors.push_back({"optim.m." + p.name, p.tensor.shape(), adam->m[i]});
      c.tensors.push_back({"optim.v." + p.name, p.tensor.shape(), adam->v[i]});
    }
  }
  return c;
}

Config config_from_checkpoint(const Checkpoint& ckpt) {
  try {
    return from_entries(ckpt.config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config snapshot is invalid: ") + e.what());
  }
}

void restore_parameters(const Checkpoint& ckpt, EditModel<float>& model, bool allow_missing_lora) {
  for (auto& p : model.parameters()) {
    const CheckpointTensor* t = ckpt.find(p.name);
    if (!t) {
      if (allow_missing_lora && p.name.rfind("lora.", 0) == 0) continue;
      throw CheckpointError("checkpoint has no tensor '" + p.name + "'");
    }
    if (t->shape != p.tensor.shape()) {
      throw CheckpointError("tensor '" + p.name + "' has shape " + ad::shape_str(t->shape) +
                            " in the checkpoint but " + ad::shape_str(p.tensor.shape()) +
                            " in the model");
    }
    std::copy(t->values.begin(), t->values.end(), p.tensor.mutable_data().begin());
  }
}

EditModel<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const Config cfg = config_from_checkpoint(ckpt);
  auto model = EditModel<float>::init(cfg.model, cfg.train.seed);
  if (ckpt.lora) model.apply_lora(cfg.lora_rank, static_cast<float>(cfg.lora_scale), cfg.train.seed);
  restore_parameters(ckpt, model);
  return model;
}

void restore_optimizer(const Checkpoint& ckpt, const ParamList<float>& trainable,
                       ad::AdamState<float>& adam) {
  adam.m.assign(trainable.size(), {});
  adam.v.assign(trainable.size(), {});
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const auto& p = trainable[i];
    const auto* m = ckpt.find("optim.m." + p.name);
    const auto* v = ckpt.find("optim.v." + p.name);
    if (!m || !v) throw CheckpointError("checkpoint has no optimizer state for '" + p.name + "'");
    if (m->shape != p.tensor.shape() || v->shape != p.tensor.shape()) {
      throw CheckpointError("optimizer state for '" + p.name + "' has the wrong shape");
    }
    adam.m[i] = m->values;
    adam.v[i] = v->values;
  }
  adam.step = ckpt.adam_step;
}

}  // namespace xedit::harness
