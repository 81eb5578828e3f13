#pragma once

#include <vector>

#include "marionette/core/rng.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(shape, std::move(v), requires_grad);
}

// Keeps |x| >= margin so piecewise-linear kinks sit outside the difference stencil.
inline Tensor random_tensor_off_zero(const Shape& shape, Rng& rng, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.normal();
    if (std::abs(x) < margin) x = x < 0 ? -margin - std::abs(x) : margin + x;
  }
  return Tensor::from(shape, std::move(v), true);
}

}  // namespace mnet::testing
