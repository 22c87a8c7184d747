#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace xedit {

/// xoshiro256** seeded through splitmix64.
///
/// The integer stream is bit-identical on every platform. Independent
/// streams are derived with Rng::stream(seed, tag, index), where `tag` names
/// the consumer (dataset rendering, parameter init, training noise, ...) and
/// `index` a sub-stream (task id, step number, instance index). Derivation
/// hashes all three through splitmix64, so streams never share state.
class Rng {
 public:
  struct State {
    std::array<std::uint64_t, 4> words{};
    bool has_spare = false;
    double spare = 0.0;
  };

  explicit Rng(std::uint64_t seed);

  static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via the Box-Muller transform (pairs cached).
  double normal();

  State state() const { return state_; }
  void set_state(const State& s) { state_ = s; }

 private:
  State state_;
};

/// splitmix64 finalizer; exposed for derived-seed bookkeeping.
std::uint64_t mix64(std::uint64_t x);

}  // namespace xedit
