#pragma once

#include <span>
#include <string>
#include <vector>

#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

// Samples S: [N, C, H, W] at p + f(p), f: [N, 2, H, W]. Channel 0 is the
// horizontal offset. Offsets are normalized so the image spans [-1, 1]
// corner to corner: a pixel offset is f * (size - 1) / 2. Samples outside the
// image read zero.
Tensor bilinear_warp(const Tensor& s, const Tensor& flow);

// Average-pools a flow field to (h, w).
Tensor downsample_flow(const Tensor& flow, int h, int w);

// Warps every pyramid level with the resolution-matched f_y.
std::vector<Tensor> normalize_target_features(std::span<const Tensor> levels, const Tensor& flow);

// Per-level mean over K target sets.
std::vector<Tensor> average_targets(std::span<const std::vector<Tensor>> sets);

// [N * K, C, H, W] with targets of a sample adjacent -> [N, C, H, W].
Tensor mean_over_targets(const Tensor& x, int k);

inline constexpr double kDecoderFlowScale = 2.0;

struct WarpAlignBlock {
  Conv2d flow_conv;  // 1x1, u channels -> 2

  WarpAlignBlock() = default;
  WarpAlignBlock(ParameterStore& store, const std::string& name, int u_channels, Rng& rng);

  Tensor flow(const Tensor& u) const;
  // concat_channels(u, T(s; 2 tanh(conv1x1(u))))
  Tensor operator()(const Tensor& u, const Tensor& s) const;
};

}  // namespace mnet
