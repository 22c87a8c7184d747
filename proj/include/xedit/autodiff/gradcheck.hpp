#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xedit/autodiff/tensor.hpp"

namespace xedit::ad {

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
  // The floor keeps entries whose true gradient is ~0 from dividing
  // finite-difference roundoff by ~0.
  double floor = 1e-3;
};

struct GradCheckReport {
  std::string name;
  std::vector<double> max_rel_error;  // one entry per input
  double worst = 0.0;
  bool passed = false;
  std::string diagnostic;  // set when evaluation itself failed
};

/// Builds a scalar from its inputs. Must be deterministic.
using GraphBuilder = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients against central differences for every
/// element of every input. Inputs are used as leaves with requires_grad set.
GradCheckReport grad_check(const std::string& name, const GraphBuilder& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& opts = {});

}  // namespace xedit::ad
