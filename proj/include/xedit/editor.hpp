#pragma once
// In-context editor: joint [z; c_S; c_T] sequence with cloned positions and
// clean condition tokens, rectified-flow training objective, Euler sampler.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xedit/adapter.hpp"
#include "xedit/backbone.hpp"
#include "xedit/image.hpp"
#include "xedit/rng.hpp"

namespace xedit {

/// How the exemplar pair reaches the backbone.
///   adapter: decoupled K'/V' attention fused into every block.
///   concat:  c_V appended to the joint sequence as PROMPT tokens.
///   none:    the pair is ignored (conditioning-blind control).
enum class Conditioning { adapter, concat, none };

const char* conditioning_name(Conditioning c);
Conditioning parse_conditioning(const std::string& s);

/// What the final layer emits. The training loss and the sampler always see
/// a velocity.
///   velocity: v directly.
///   sample:   a clean-image estimate x0, converted by
///             v = (x_t - x0) / max(t, t_floor).
enum class Prediction { velocity, sample };

const char* prediction_name(Prediction p);
Prediction parse_prediction(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  AdapterConfig adapter;
  Conditioning conditioning = Conditioning::adapter;
  Prediction prediction = Prediction::velocity;
  double t_floor = 0.05;
};

template <class T>
struct EditModel {
  ModelConfig config;
  Backbone<T> backbone;
  AdapterState<T> adapter;

  static EditModel init(const ModelConfig& cfg, std::uint64_t seed);

  /// Every parameter, trainable or not, in a fixed order.
  ParamList<T> parameters() const;

  /// Wraps W_q, W_k, W_v, W_o, fc1 and fc2 of every block.
  void apply_lora(std::size_t rank, T scale, std::uint64_t seed);
  bool has_lora() const;
};

/// Parameters that currently require a gradient.
template <class T>
ParamList<T> trainable_params(const EditModel<T>& model);

/// LoRA fine-tuning regime: freezes every backbone tensor except the text
/// table and tensors whose name starts with one of `unfrozen` prefixes.
/// LoRA factors, adapter and prompt encoder stay trainable.
template <class T>
void freeze_base(EditModel<T>& model, const std::vector<std::string>& unfrozen);

template <class T>
void freeze_all(EditModel<T>& model);

/// One example with its images in memory.
struct EditSample {
  Image prompt;
  Image reference;
  Image source;
  Image target;
  std::size_t instruction = 0;
};

/// Builds [z; c_S; c_T] (plus trailing PROMPT rows when `prompt_tokens` is
/// given, concat variant only). NOISY row i and COND row i share grid coords.
template <class T>
TokenSequence<T> build_sequence(const EditModel<T>& model, const Image& source,
                                const Tensor<T>& noisy_payload, std::size_t instruction,
                                const Tensor<T>& prompt_tokens = {});

/// Velocity on the NOISY rows (N x payload). `prompt_tokens` may be
/// undefined, in which case no exemplar information is injected.
template <class T>
Tensor<T> predict_velocity(const EditModel<T>& model, const Image& source,
                           const Tensor<T>& noisy_payload, double t, std::size_t instruction,
                           const Tensor<T>& prompt_tokens, T alpha,
                           TokenSequence<T>* sequence = nullptr,
                           std::vector<BlockTrace<T>>* traces = nullptr);

template <class T>
struct FlowState {
  double t = 0.0;
  Tensor<T> x_t;  // (1 - t) x0 + t eps
  Tensor<T> eps;
};

template <class T>
FlowState<T> make_flow_state(const Tensor<T>& x0, const Tensor<T>& eps, double t);

/// mean || v_hat - (eps - x0) ||^2 as a graph scalar.
template <class T>
Tensor<T> rectified_flow_loss(const Tensor<T>& v_hat, const Tensor<T>& x0, const Tensor<T>& eps);

struct TrainOptions {
  double p_drop = 0.1;
  double alpha = 1.0;
  /// Scales each example's velocity loss by max(t, t_floor)^2, which turns it
  /// into a clean-image error.
  bool clean_weighting = false;
};

template <class T>
struct TrainingLoss {
  Tensor<T> loss;
  double t = 0.0;
  bool prompt_dropped = false;
  bool text_dropped = false;
};

/// Loss graph for one example. Draws t, eps and the two dropout coins from
/// `rng` in that order.
template <class T>
TrainingLoss<T> training_loss(const EditModel<T>& model, const EditSample& sample, Rng& rng,
                              const TrainOptions& opts);

/// A forward or backward pass produced a non-finite value.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, double t_value)
      : std::runtime_error(what), t(t_value) {}
  double t;
};

/// training_loss followed by backward of loss * loss_weight. Gradients
/// accumulate into the trainable parameters. Returns the unweighted loss.
template <class T>
double training_step(const EditModel<T>& model, const EditSample& sample, Rng& rng,
                     const TrainOptions& opts, double loss_weight = 1.0);

struct SampleRequest {
  Image prompt;
  Image reference;
  Image source;
  std::size_t instruction = 0;
  std::size_t steps = 24;
  double guidance = 0.0;  // 0 disables the unconditional branch
  std::uint64_t seed = 1000;
  double alpha = 1.0;
};

template <class T>
using StepObserver =
    std::function<void(std::size_t step, double t, const TokenSequence<T>& sequence)>;

/// Plain Euler integration of dx/dt = v from t = 1 to 0 in uniform steps:
/// x <- x - v(x, t_i) / steps with t_i = 1 - i / steps.
template <class T>
std::vector<T> euler_integrate(
    std::vector<T> x1, std::size_t steps,
    const std::function<std::vector<T>(const std::vector<T>& x, double t)>& velocity);

/// Samples I_tar for a request. Deterministic in the request; reentrant.
/// Throws DivergenceError naming the step on a non-finite state.
template <class T>
Image sample(const EditModel<T>& model, const SampleRequest& req,
             const StepObserver<T>& observer = {});

struct EditDefaults {
  std::size_t steps = 24;
  double guidance = 0.0;
  double alpha = 1.0;
  std::uint64_t seed = 1000;
};

template <class T>
Image edit(const EditModel<T>& model, const Image& prompt, const Image& reference,
           const Image& source, std::size_t instruction, const EditDefaults& defaults = {});

}  // namespace xedit
