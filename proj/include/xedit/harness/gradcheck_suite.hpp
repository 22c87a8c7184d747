#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xedit/autodiff/gradcheck.hpp"

namespace xedit::harness {

struct GradSuiteOptions {
  std::size_t seeds = 10;
  std::uint64_t base_seed = 1;
  bool include_model = true;   // end-to-end micro-model check
  bool inject_fault = false;   // add a primitive with a deliberately wrong backward rule
};

/// Finite-difference checks over every differentiable primitive on random
/// small shapes, one report per (primitive, seed), plus the micro-model.
std::vector<ad::GradCheckReport> run_gradient_suite(const GradSuiteOptions& opts = {});

}  // namespace xedit::harness
