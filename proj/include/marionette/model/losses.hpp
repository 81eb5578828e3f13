#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "marionette/core/tensor.hpp"

namespace mnet {

// Per-patch hinge terms, each averaged over its score map.
Tensor hinge_d_loss(const Tensor& real, const Tensor& fake);
Tensor hinge_g_loss(const Tensor& fake);

// Sum over taps of the mean absolute difference. The real taps are detached.
Tensor feature_matching_loss(std::span<const Tensor> real, std::span<const Tensor> fake);

inline constexpr int kFeatureNetStages = 5;

// Frozen random conv net standing in for a pretrained perceptual network.
// Stage i: [avgpool2 if i > 0] conv3 relu; one tap per stage.
class FeatureNet {
 public:
  FeatureNet() = default;
  FeatureNet(std::uint64_t seed, std::vector<int> widths = {16, 32, 64, 64, 64}, int in_channels = 3);

  std::vector<Tensor> taps(const Tensor& x) const;
  const std::vector<Tensor>& weights() const { return weights_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::vector<Tensor> weights_;
};

// Mean over taps of the weighted mean absolute feature difference. Pixel
// weight is 1 + 2 * (mask average-pooled to the tap's resolution); mask is
// [N, 1, H, W] in {0, 1}, or undefined for uniform weight.
Tensor perceptual_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mask, const FeatureNet& net);

struct LossWeights {
  double perceptual = 10.0;       // lambda_P
  double perceptual_face = 0.01;  // lambda_PF
  double feature_matching = 10.0; // lambda_FM
};

struct GeneratorLossParts {
  Tensor gan, perceptual, perceptual_face, feature_matching;
};

Tensor generator_total_loss(const GeneratorLossParts& parts, const LossWeights& weights = {});

}  // namespace mnet
