#include "xedit/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace xedit::ad {

GradCheckReport grad_check(const std::string& name, const GraphBuilder& f,
                           std::vector<Tensor<double>> inputs, const GradCheckOptions& opts) {
  GradCheckReport report;
  report.name = name;
  try {
    for (auto& in : inputs) {
      in.set_requires_grad(true);
      in.zero_grad();
    }
    auto out = f(inputs);
    if (out.size() != 1) throw ContractError("grad_check: graph builder must return a scalar");
    backward(out);

    for (auto& in : inputs) {
      std::vector<double> analytic(in.size(), 0.0);
      if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
      auto values = in.mutable_data();
      double worst = 0.0;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        values[i] = saved + opts.h;
        const double up = f(inputs).item();
        values[i] = saved - opts.h;
        const double down = f(inputs).item();
        values[i] = saved;
        const double numeric = (up - down) / (2.0 * opts.h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), opts.floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
      }
      report.max_rel_error.push_back(worst);
      report.worst = std::max(report.worst, worst);
    }
    report.passed = report.worst <= opts.tol;
  } catch (const NumericError& e) {
    report.passed = false;
    report.diagnostic = "primitive '" + e.primitive + "': " + e.what();
  } catch (const std::exception& e) {
    report.passed = false;
    report.diagnostic = e.what();
  }
  return report;
}

}  // namespace xedit::ad
