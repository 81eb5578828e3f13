#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

// Sinusoidal 2-D encoding as a [c, h, w] tensor. Channels 4k, 4k+1 carry
// sin/cos of 256 i / (h 10000^(2k/c)); 4k+2, 4k+3 the same for j and w.
Tensor positional_encoding(int h, int w, int c);

struct AttentionParams {
  int query_channels = 0;  // c_x
  int target_channels = 0;  // c_y
  int attention_channels = 0;  // c_a
  Linear w_q, w_qp, w_k, w_kp, w_v;
  Conv2d post_conv;

  AttentionParams() = default;
  // c_a defaults to c_x / 2.
  AttentionParams(ParameterStore& store, const std::string& name, int cx, int cy, Rng& rng, int ca = 0);
};

// Driver z_x: [N, c_x, h_x, w_x]; targets Z_y: [N, K, c_y, h_y, w_y].
// Softmax weights over all K * h_y * w_y keys: [N, h_x * w_x, K * h_y * w_y].
Tensor attention_weights(const Tensor& zx, const Tensor& zy, const AttentionParams& p);

// softmax(Q K^T / sqrt(c_a)) V reshaped to z_x's shape.
Tensor image_attention(const Tensor& zx, const Tensor& zy, const AttentionParams& p);

// conv(instance_norm(z_x + image_attention(z_x, Z_y)))
Tensor attention_block(const Tensor& zx, const Tensor& zy, const AttentionParams& p);

inline constexpr int kBlenderBlocks = 3;

struct Blender {
  std::vector<AttentionParams> blocks;

  Blender() = default;
  Blender(ParameterStore& store, const std::string& name, int cx, int cy, Rng& rng);
  Tensor operator()(const Tensor& zx, const Tensor& zy) const;
};

// Weights of one query position (row, col) of sample `n`: [K, h_y, w_y].
Tensor export_attention_map(const Tensor& zx, const Tensor& zy, const AttentionParams& p, int row, int col, int n = 0);

// One 8-bit PGM per target, scaled so the largest weight overall is white.
std::vector<std::filesystem::path> write_attention_maps(const std::filesystem::path& directory, const std::string& stem,
                                                        const Tensor& map);

}  // namespace mnet
