#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "marionette/core/tensor.hpp"

namespace mnet {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Learning rates used for the reenactment GAN and the disentangler.
inline constexpr double kDiscriminatorLr = 2e-4;
inline constexpr double kGeneratorLr = 5e-5;
inline constexpr double kDisentanglerLr = 3e-4;

struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

AdamState make_adam_state(std::span<const Tensor> params, AdamOptions options);

// Bias-corrected Adam update applied in place to the parameters' values.
// Throws if a parameter has no gradient buffer.
void adam_step(AdamState& state, std::span<Tensor> params);

// Scales all gradients so their joint Euclidean norm is at most max_norm.
// Returns the norm before scaling.
inline constexpr double kDefaultMaxGradNorm = 1.0;
double clip_grad_norm(std::span<Tensor> params, double max_norm = kDefaultMaxGradNorm);

double global_grad_norm(std::span<const Tensor> params);

}  // namespace mnet
