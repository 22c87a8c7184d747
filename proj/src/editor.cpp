#include "xedit/editor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xedit/autodiff/ops.hpp"

namespace xedit {

using namespace xedit::ad;

const char* conditioning_name(Conditioning c) {
  switch (c) {
    case Conditioning::adapter: return "adapter";
    case Conditioning::concat: return "concat";
    case Conditioning::none: return "none";
  }
  return "?";
}

Conditioning parse_conditioning(const std::string& s) {
  if (s == "adapter") return Conditioning::adapter;
  if (s == "concat") return Conditioning::concat;
  if (s == "none") return Conditioning::none;
  throw std::invalid_argument("unknown conditioning '" + s + "' (expected adapter, concat or none)");
}

const char* prediction_name(Prediction p) {
  return p == Prediction::velocity ? "velocity" : "sample";
}

Prediction parse_prediction(const std::string& s) {
  if (s == "velocity") return Prediction::velocity;
  if (s == "sample") return Prediction::sample;
  throw std::invalid_argument("unknown prediction '" + s + "' (expected velocity or sample)");
}

template <class T>
EditModel<T> EditModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.backbone.validate();
  EditModel m;
  m.config = cfg;
  m.backbone = Backbone<T>::init(cfg.backbone, seed);
  m.adapter = AdapterState<T>::init(cfg.backbone, cfg.adapter,
                                    cfg.conditioning == Conditioning::adapter, seed);
  return m;
}

template <class T>
ParamList<T> EditModel<T>::parameters() const {
  ParamList<T> out;
  backbone.collect(out);
  adapter.collect(out);
  return out;
}

template <class T>
void EditModel<T>::apply_lora(std::size_t rank, T scale, std::uint64_t seed) {
  if (has_lora()) throw std::logic_error("LoRA is already applied to this model");
  Rng rng = Rng::stream(seed, "init.lora");
  for (auto& blk : backbone.blocks) {
    for (Linear<T>* l : {&blk.q, &blk.k, &blk.v, &blk.o, &blk.fc1, &blk.fc2}) {
      lora::wrap(l->proj, rank, scale, rng);
    }
  }
}

template <class T>
bool EditModel<T>::has_lora() const {
  return !backbone.blocks.empty() && backbone.blocks.front().q.proj.wrapped();
}

template <class T>
ParamList<T> trainable_params(const EditModel<T>& model) {
  ParamList<T> out;
  for (auto& p : model.parameters()) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

template <class T>
void freeze_base(EditModel<T>& model, const std::vector<std::string>& unfrozen) {
  for (auto& p : model.parameters()) {
    if (!starts_with(p.name, "backbone.")) continue;
    const bool keep = std::any_of(unfrozen.begin(), unfrozen.end(),
                                  [&](const std::string& pre) { return starts_with(p.name, pre); });
    p.tensor.set_requires_grad(keep);
  }
  // The wrap already froze W0; make sure an unfreeze prefix cannot revive it.
  for (auto& blk : model.backbone.blocks) {
    for (Linear<T>* l : {&blk.q, &blk.k, &blk.v, &blk.o, &blk.fc1, &blk.fc2}) {
      if (l->proj.wrapped()) l->proj.base.set_requires_grad(false);
    }
  }
}

template <class T>
void freeze_all(EditModel<T>& model) {
  for (auto& p : model.parameters()) p.tensor.set_requires_grad(false);
}

namespace {

template <class T>
Tensor<T> segment_row(const Backbone<T>& net, Segment s) {
  const auto i = static_cast<std::size_t>(s);
  return slice(net.segment_table, 0, i, i + 1);
}

template <class T>
Tensor<T> payload_tensor(const PatchGrid& grid) {
  return Tensor<T>::from({grid.count(), grid.payload_dim()},
                         std::vector<T>(grid.payload.begin(), grid.payload.end()));
}

void check_resolution(const BackboneConfig& cfg, const Image& img, const char* what) {
  if (img.height != cfg.height || img.width != cfg.width) {
    throw std::invalid_argument(std::string(what) + " image is " + std::to_string(img.height) +
                                "x" + std::to_string(img.width) + ", model expects " +
                                std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  }
}

}  // namespace

template <class T>
TokenSequence<T> build_sequence(const EditModel<T>& model, const Image& source,
                                const Tensor<T>& noisy_payload, std::size_t instruction,
                                const Tensor<T>& prompt_tokens) {
  const auto& net = model.backbone;
  const auto& cfg = net.config;
  check_resolution(cfg, source, "source");
  const std::size_t n = cfg.tokens_per_image();
  const std::size_t d = cfg.d_model;
  if (noisy_payload.rank() != 2 || noisy_payload.dim(0) != n ||
      noisy_payload.dim(1) != cfg.payload_dim()) {
    throw ShapeError("noisy payload must be " + std::to_string(n) + "x" +
                     std::to_string(cfg.payload_dim()) + ", got " +
                     shape_str(noisy_payload.shape()));
  }
  if (instruction >= cfg.vocab) {
    throw std::out_of_range("instruction id " + std::to_string(instruction) +
                            " outside vocabulary of " + std::to_string(cfg.vocab));
  }
  const auto grid = patchify(source, cfg.patch);
  const auto pos = position_encoding<T>(grid.coords, d);

  TokenSequence<T> seq;
  seq.coords = grid.coords;
  seq.coords.insert(seq.coords.end(), grid.coords.begin(), grid.coords.end());
  seq.coords.push_back(kTextCoord);
  seq.segments.assign(n, Segment::noisy);
  seq.segments.insert(seq.segments.end(), n, Segment::cond);
  seq.segments.push_back(Segment::text);

  const auto z = add_row(add(net.patch_embed(noisy_payload), pos), segment_row(net, Segment::noisy));
  // c_S is embedded from the clean source only; nothing here depends on t.
  const auto cs =
      add_row(add(net.patch_embed(payload_tensor<T>(grid)), pos), segment_row(net, Segment::cond));
  const auto ct = add_row(add(embedding(net.text_table, {instruction}), net.text_position),
                          segment_row(net, Segment::text));
  std::vector<Tensor<T>> rows = {z, cs, ct};
  std::vector<Tensor<T>> positional = {pos, pos, net.text_position};
  if (prompt_tokens.defined()) {
    if (prompt_tokens.cols() != d) {
      throw ShapeError("prompt tokens must have width " + std::to_string(d) + ", got " +
                       shape_str(prompt_tokens.shape()));
    }
    const std::size_t m = prompt_tokens.rows();
    rows.push_back(add_row(prompt_tokens, segment_row(net, Segment::prompt)));
    positional.push_back(Tensor<T>::zeros({m, d}));
    seq.coords.insert(seq.coords.end(), m, kTextCoord);
    seq.segments.insert(seq.segments.end(), m, Segment::prompt);
  }
  seq.tokens = concat(rows, 0);
  seq.positional = concat(positional, 0);
  return seq;
}

template <class T>
Tensor<T> predict_velocity(const EditModel<T>& model, const Image& source,
                           const Tensor<T>& noisy_payload, double t, std::size_t instruction,
                           const Tensor<T>& prompt_tokens, T alpha, TokenSequence<T>* sequence,
                           std::vector<BlockTrace<T>>* traces) {
  const bool concat_path =
      model.config.conditioning == Conditioning::concat && prompt_tokens.defined();
  const bool adapter_path =
      model.config.conditioning == Conditioning::adapter && prompt_tokens.defined();
  auto seq = build_sequence(model, source, noisy_payload, instruction,
                            concat_path ? prompt_tokens : Tensor<T>{});
  QueryInjection<T> injection;
  if (adapter_path) {
    const auto& adapter = model.adapter;
    const std::size_t heads = model.config.backbone.heads;
    injection = [&adapter, &prompt_tokens, heads](const Tensor<T>& q, std::size_t b) {
      return adapter_attention(adapter, q, prompt_tokens, b, heads);
    };
  }
  auto v = backbone_forward(model.backbone, seq, t, injection, alpha, traces);
  if (model.config.prediction == Prediction::sample) {
    v = scale(sub(noisy_payload, v), T(1.0 / std::max(t, model.config.t_floor)));
  }
  if (sequence) *sequence = std::move(seq);
  return v;
}

template <class T>
FlowState<T> make_flow_state(const Tensor<T>& x0, const Tensor<T>& eps, double t) {
  if (x0.shape() != eps.shape()) {
    throw ShapeError("flow state: x0 " + shape_str(x0.shape()) + " and eps " +
                     shape_str(eps.shape()) + " differ");
  }
  std::vector<T> xt(x0.size());
  const T a = T(1.0 - t), b = T(t);
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = a * x0[i] + b * eps[i];
  return {t, Tensor<T>::from(x0.shape(), std::move(xt)), eps};
}

template <class T>
Tensor<T> rectified_flow_loss(const Tensor<T>& v_hat, const Tensor<T>& x0, const Tensor<T>& eps) {
  return mse_loss(v_hat, sub(eps, x0));
}

namespace {

template <class T>
Tensor<T> gaussian_payload(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<T> v(rows * cols);
  for (auto& x : v) x = T(rng.normal());
  return Tensor<T>::from({rows, cols}, std::move(v));
}

template <class T>
Tensor<T> prompt_for(const EditModel<T>& model, const Image& prompt, const Image& reference,
                     bool null_prompt) {
  if (model.config.conditioning == Conditioning::none) return {};
  if (null_prompt) return model.adapter.null_prompt;
  return encode_prompt_pair(model.adapter.encoder, prompt, reference);
}

}  // namespace

template <class T>
TrainingLoss<T> training_loss(const EditModel<T>& model, const EditSample& sample, Rng& rng,
                              const TrainOptions& opts) {
  const auto& cfg = model.config.backbone;
  check_resolution(cfg, sample.target, "target");
  TrainingLoss<T> out;
  out.t = rng.uniform();
  const auto x0 = payload_tensor<T>(patchify(sample.target, cfg.patch));
  const auto eps = gaussian_payload<T>(rng, x0.dim(0), x0.dim(1));
  out.prompt_dropped = rng.uniform() < opts.p_drop;
  out.text_dropped = rng.uniform() < opts.p_drop;

  const auto flow = make_flow_state(x0, eps, out.t);
  const auto c_v = prompt_for(model, sample.prompt, sample.reference, out.prompt_dropped);
  const std::size_t instruction = out.text_dropped ? 0 : sample.instruction;
  const auto v_hat = predict_velocity(model, sample.source, flow.x_t, out.t, instruction, c_v,
                                      T(opts.alpha));
  out.loss = rectified_flow_loss(v_hat, x0, eps);
  if (opts.clean_weighting) {
    const double w = std::max(out.t, model.config.t_floor);
    out.loss = scale(out.loss, T(w * w));
  }
  return out;
}

template <class T>
double training_step(const EditModel<T>& model, const EditSample& sample, Rng& rng,
                     const TrainOptions& opts, double loss_weight) {
  double t = -1.0;
  try {
    auto tl = training_loss(model, sample, rng, opts);
    t = tl.t;
    const double value = tl.loss.item();
    backward(loss_weight == 1.0 ? tl.loss : scale(tl.loss, T(loss_weight)));
    return value;
  } catch (const NumericError& e) {
    throw DivergenceError(std::string(e.what()) + " (t=" + std::to_string(t) + ")", t);
  }
}

template <class T>
std::vector<T> euler_integrate(
    std::vector<T> x, std::size_t steps,
    const std::function<std::vector<T>(const std::vector<T>& x, double t)>& velocity) {
  if (steps == 0) throw std::invalid_argument("sampler steps must be at least 1");
  const T dt = T(1) / T(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = 1.0 - static_cast<double>(i) / static_cast<double>(steps);
    const auto v = velocity(x, t);
    if (v.size() != x.size()) throw ShapeError("velocity size does not match the state");
    for (std::size_t j = 0; j < x.size(); ++j) x[j] -= v[j] * dt;
  }
  return x;
}

template <class T>
Image sample(const EditModel<T>& model, const SampleRequest& req, const StepObserver<T>& observer) {
  const auto& cfg = model.config.backbone;
  if (req.steps == 0) throw std::invalid_argument("sampler steps must be at least 1");
  if (req.guidance < 0.0) throw std::invalid_argument("guidance scale must be non-negative");
  check_resolution(cfg, req.source, "source");
  NoGradGuard no_grad;

  const std::size_t n = cfg.tokens_per_image();
  const std::size_t p = cfg.payload_dim();
  Rng rng = Rng::stream(req.seed, "sample");
  std::vector<T> x1(n * p);
  for (auto& v : x1) v = T(rng.normal());

  const auto c_v = prompt_for(model, req.prompt, req.reference, false);
  const bool guided = req.guidance > 0.0;
  const auto c_null = guided ? prompt_for(model, req.prompt, req.reference, true) : Tensor<T>{};
  const T alpha = T(req.alpha);
  const T gamma = T(req.guidance);

  std::size_t step = 0;
  auto velocity = [&](const std::vector<T>& x, double t) {
    const auto xt = Tensor<T>::from({n, p}, x);
    TokenSequence<T> seq;
    std::vector<T> v;
    try {
      const auto vc =
          predict_velocity(model, req.source, xt, t, req.instruction, c_v, alpha, &seq);
      v.assign(vc.data().begin(), vc.data().end());
      if (guided) {
        const auto vu = predict_velocity(model, req.source, xt, t, 0, c_null, alpha);
        for (std::size_t j = 0; j < v.size(); ++j) v[j] = vu[j] + gamma * (v[j] - vu[j]);
      }
    } catch (const NumericError& e) {
      throw DivergenceError("sampler diverged at step " + std::to_string(step) + ": " + e.what(),
                            t);
    }
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!std::isfinite(x[j] - v[j] / T(req.steps))) {
        throw DivergenceError("sampler state became non-finite at step " + std::to_string(step), t);
      }
    }
    if (observer) observer(step, t, seq);
    ++step;
    return v;
  };
  const auto x0 = euler_integrate<T>(std::move(x1), req.steps, velocity);

  std::vector<float> payload(x0.size());
  for (std::size_t j = 0; j < x0.size(); ++j) {
    payload[j] = std::clamp(static_cast<float>(x0[j]), 0.0f, 1.0f);
  }
  return unpatchify(payload, cfg.grid_rows(), cfg.grid_cols(), cfg.patch);
}

template <class T>
Image edit(const EditModel<T>& model, const Image& prompt, const Image& reference,
           const Image& source, std::size_t instruction, const EditDefaults& defaults) {
  SampleRequest req;
  req.prompt = prompt;
  req.reference = reference;
  req.source = source;
  req.instruction = instruction;
  req.steps = defaults.steps;
  req.guidance = defaults.guidance;
  req.alpha = defaults.alpha;
  req.seed = defaults.seed;
  return sample(model, req);
}

#define XEDIT_INSTANTIATE_EDITOR(T)                                                           \
  template struct EditModel<T>;                                                               \
  template ParamList<T> trainable_params<T>(const EditModel<T>&);                             \
  template void freeze_base<T>(EditModel<T>&, const std::vector<std::string>&);               \
  template void freeze_all<T>(EditModel<T>&);                                                 \
  template TokenSequence<T> build_sequence<T>(const EditModel<T>&, const Image&,              \
                                              const Tensor<T>&, std::size_t,                  \
                                              const Tensor<T>&);                              \
  template Tensor<T> predict_velocity<T>(const EditModel<T>&, const Image&, const Tensor<T>&, \
                                         double, std::size_t, const Tensor<T>&, T,            \
                                         TokenSequence<T>*, std::vector<BlockTrace<T>>*);     \
  template FlowState<T> make_flow_state<T>(const Tensor<T>&, const Tensor<T>&, double);       \
  template Tensor<T> rectified_flow_loss<T>(const Tensor<T>&, const Tensor<T>&,               \
                                            const Tensor<T>&);                                \
  template TrainingLoss<T> training_loss<T>(const EditModel<T>&, const EditSample&, Rng&,     \
                                            const TrainOptions&);                             \
  template double training_step<T>(const EditModel<T>&, const EditSample&, Rng&,              \
                                   const TrainOptions&, double);                              \
  template std::vector<T> euler_integrate<T>(                                                 \
      std::vector<T>, std::size_t,                                                            \
      const std::function<std::vector<T>(const std::vector<T>&, double)>&);                   \
  template Image sample<T>(const EditModel<T>&, const SampleRequest&, const StepObserver<T>&); \
  template Image edit<T>(const EditModel<T>&, const Image&, const Image&, const Image&,       \
                         std::size_t, const EditDefaults&);

XEDIT_INSTANTIATE_EDITOR(float)
XEDIT_INSTANTIATE_EDITOR(double)

}  // namespace xedit
