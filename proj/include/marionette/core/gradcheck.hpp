#pragma once

#include <functional>
#include <string>
#include <vector>

#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Entries sampled per parameter (evenly strided); 0 checks every entry.
  std::size_t max_entries = 0;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Further steps tried when `step` disagrees; an entry passes on its best
  // step. Helps deep piecewise-linear models, where large steps cross kinks
  // and small ones drown near-zero gradients in roundoff.
  std::vector<double> fallback_steps;
};

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

// Compares reverse-mode gradients of the scalar `fn()` with central
// differences. Throws std::runtime_error if two evaluations of `fn` differ.
GradCheckReport grad_check(const std::function<Tensor()>& fn, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

GradCheckReport grad_check(const std::function<Tensor()>& fn, const std::vector<Tensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace mnet
