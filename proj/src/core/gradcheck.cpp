#include "marionette/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mnet {

GradCheckReport grad_check(const std::function<Tensor()>& fn, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  for (double h : options.fallback_steps) {
    if (!(h > 0.0)) throw std::invalid_argument("grad_check: fallback steps must be positive");
  }
  std::vector<double> steps = {options.step};
  steps.insert(steps.end(), options.fallback_steps.begin(), options.fallback_steps.end());

  const double first = fn().item();
  const double second = fn().item();
  if (first != second) throw std::runtime_error("grad_check: function is not deterministic");

  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (!t.is_leaf()) throw std::invalid_argument("grad_check: '" + p.name + "' is not a leaf tensor");
    t.set_requires_grad(true);
    t.zero_grad();
  }
  fn().backward();
  for (const auto& p : params) {
    const auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.tensor.numel(), 0.0);
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor t = params[k].tensor;
    auto values = t.mutable_data();
    const std::size_t n = values.size();
    const std::size_t count = options.max_entries == 0 ? n : std::min(n, options.max_entries);
    GradCheckEntry entry{params[k].name, count, 0.0};
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t i = count == n ? s : (s * n) / count;
      const double saved = values[i];
      const double a = analytic[k][i];
      double best = std::numeric_limits<double>::infinity();
      for (double h : steps) {
        values[i] = saved + h;
        const double plus = fn().item();
        values[i] = saved - h;
        const double minus = fn().item();
        values[i] = saved;
        const double numeric = (plus - minus) / (2.0 * h);
        const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        best = std::min(best, std::abs(a - numeric) / denom);
        if (best < options.tolerance) break;
      }
      entry.max_rel_error = std::max(entry.max_rel_error, best);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                           const GradCheckOptions& options) {
  std::vector<NamedTensor> named;
  for (std::size_t i = 0; i < params.size(); ++i) named.push_back({"param" + std::to_string(i), params[i]});
  return grad_check(fn, named, options);
}

}  // namespace mnet
