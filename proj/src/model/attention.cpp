#include "marionette/model/attention.hpp"

#include <algorithm>
#include <cmath>

#include "marionette/core/ops.hpp"
#include "marionette/image.hpp"

namespace mnet {

namespace {

// [c, h, w] encoding -> [h * w, c]
Tensor flat_encoding(int h, int w, int c) {
  return permute(reshape(positional_encoding(h, w, c), {c, h * w}), {1, 0});
}

void check_inputs(const Tensor& zx, const Tensor& zy, const AttentionParams& p) {
  if (zx.rank() != 4) throw ShapeError("attention: driver map must be [N, C, H, W], got " + shape_str(zx.shape()));
  if (zy.rank() != 5) throw ShapeError("attention: target maps must be [N, K, C, H, W], got " + shape_str(zy.shape()));
  if (zx.dim(0) != zy.dim(0)) {
    throw ShapeError("attention: batch mismatch, driver " + shape_str(zx.shape()) + " vs targets " + shape_str(zy.shape()));
  }
  if (zx.dim(1) != p.query_channels) {
    throw ShapeError("attention: driver has " + std::to_string(zx.dim(1)) + " channels, block expects " +
                     std::to_string(p.query_channels));
  }
  if (zy.dim(2) != p.target_channels) {
    throw ShapeError("attention: targets have " + std::to_string(zy.dim(2)) + " channels, block expects " +
                     std::to_string(p.target_channels));
  }
}

struct Projected {
  Tensor q;  // [N, hx*wx, ca]
  Tensor k;  // [N, K*hy*wy, ca]
  Tensor v;  // [N, K*hy*wy, cx]
};

Projected project(const Tensor& zx, const Tensor& zy, const AttentionParams& p) {
  check_inputs(zx, zy, p);
  const int n = zx.dim(0);
  const int cx = zx.dim(1);
  const int hx = zx.dim(2);
  const int wx = zx.dim(3);
  const int k = zy.dim(1);
  const int cy = zy.dim(2);
  const int hy = zy.dim(3);
  const int wy = zy.dim(4);

  const Tensor x_rows = permute(reshape(zx, {n, cx, hx * wx}), {0, 2, 1});
  const Tensor y_rows = reshape(permute(zy, {0, 1, 3, 4, 2}), {n, k, hy * wy, cy});

  Projected out;
  out.q = p.w_q(x_rows) + p.w_qp(flat_encoding(hx, wx, cx));
  out.k = reshape(p.w_k(y_rows) + p.w_kp(flat_encoding(hy, wy, cy)), {n, k * hy * wy, p.attention_channels});
  out.v = reshape(p.w_v(y_rows), {n, k * hy * wy, cx});
  return out;
}

}  // namespace

Tensor positional_encoding(int h, int w, int c) {
  if (h < 1 || w < 1) throw ShapeError("positional_encoding: grid must be non-empty");
  if (c < 4 || c % 4 != 0) throw ShapeError("positional_encoding: channels must be a positive multiple of 4, got " + std::to_string(c));
  std::vector<double> v(static_cast<std::size_t>(c) * h * w);
  auto at = [&](int ch, int i, int j) -> double& { return v[(static_cast<std::size_t>(ch) * h + i) * w + j]; };
  for (int k = 0; k < c / 4; ++k) {
    const double denom = std::pow(10000.0, 2.0 * k / c);
    for (int i = 0; i < h; ++i) {
      const double a = 256.0 * i / (h * denom);
      for (int j = 0; j < w; ++j) {
        const double b = 256.0 * j / (w * denom);
        at(4 * k, i, j) = std::sin(a);
        at(4 * k + 1, i, j) = std::cos(a);
        at(4 * k + 2, i, j) = std::sin(b);
        at(4 * k + 3, i, j) = std::cos(b);
      }
    }
  }
  return Tensor::from({c, h, w}, std::move(v));
}

AttentionParams::AttentionParams(ParameterStore& store, const std::string& name, int cx, int cy, Rng& rng, int ca)
    : query_channels(cx), target_channels(cy), attention_channels(ca > 0 ? ca : cx / 2) {
  if (attention_channels < 1) throw ShapeError("attention: c_a must be positive");
  const LayerOptions proj{.bias = false};
  w_q = Linear(store, name + ".w_q", cx, attention_channels, rng, proj);
  w_qp = Linear(store, name + ".w_qp", cx, attention_channels, rng, proj);
  w_k = Linear(store, name + ".w_k", cy, attention_channels, rng, proj);
  w_kp = Linear(store, name + ".w_kp", cy, attention_channels, rng, proj);
  w_v = Linear(store, name + ".w_v", cy, cx, rng, proj);
  post_conv = Conv2d(store, name + ".conv", cx, cx, 3, rng);
}

Tensor attention_weights(const Tensor& zx, const Tensor& zy, const AttentionParams& p) {
  const Projected pr = project(zx, zy, p);
  return softmax_lastdim(scale(matmul(pr.q, pr.k, true), 1.0 / std::sqrt(static_cast<double>(p.attention_channels))));
}

Tensor image_attention(const Tensor& zx, const Tensor& zy, const AttentionParams& p) {
  const Projected pr = project(zx, zy, p);
  const Tensor weights =
      softmax_lastdim(scale(matmul(pr.q, pr.k, true), 1.0 / std::sqrt(static_cast<double>(p.attention_channels))));
  const Tensor rows = matmul(weights, pr.v);  // [N, hx*wx, cx]
  return reshape(permute(rows, {0, 2, 1}), zx.shape());
}

Tensor attention_block(const Tensor& zx, const Tensor& zy, const AttentionParams& p) {
  return p.post_conv(instance_norm(zx + image_attention(zx, zy, p)));
}

Blender::Blender(ParameterStore& store, const std::string& name, int cx, int cy, Rng& rng) {
  for (int b = 0; b < kBlenderBlocks; ++b) blocks.emplace_back(store, name + ".block" + std::to_string(b), cx, cy, rng);
}

Tensor Blender::operator()(const Tensor& zx, const Tensor& zy) const {
  Tensor z = zx;
  for (const auto& block : blocks) z = attention_block(z, zy, block);
  return z;
}

Tensor export_attention_map(const Tensor& zx, const Tensor& zy, const AttentionParams& p, int row, int col, int n) {
  check_inputs(zx, zy, p);
  if (row < 0 || row >= zx.dim(2) || col < 0 || col >= zx.dim(3)) {
    throw std::out_of_range("export_attention_map: query (" + std::to_string(row) + ", " + std::to_string(col) +
                            ") outside the " + std::to_string(zx.dim(2)) + "x" + std::to_string(zx.dim(3)) + " driver grid");
  }
  if (n < 0 || n >= zx.dim(0)) throw std::out_of_range("export_attention_map: sample index out of range");
  const Tensor w = attention_weights(zx.detach(), zy.detach(), p);
  const int keys = w.dim(2);
  const std::size_t offset = (static_cast<std::size_t>(n) * w.dim(1) + static_cast<std::size_t>(row) * zx.dim(3) + col) * keys;
  std::vector<double> values(w.data().begin() + static_cast<std::ptrdiff_t>(offset),
                             w.data().begin() + static_cast<std::ptrdiff_t>(offset + keys));
  return Tensor::from({zy.dim(1), zy.dim(3), zy.dim(4)}, std::move(values));
}

std::vector<std::filesystem::path> write_attention_maps(const std::filesystem::path& directory, const std::string& stem,
                                                        const Tensor& map) {
  if (map.rank() != 3) throw ShapeError("write_attention_maps: expected [K, H, W], got " + shape_str(map.shape()));
  std::filesystem::create_directories(directory);
  const auto values = map.data();
  const double peak = std::max(*std::max_element(values.begin(), values.end()), 1e-300);
  const int plane = map.dim(1) * map.dim(2);
  std::vector<std::filesystem::path> written;
  for (int k = 0; k < map.dim(0); ++k) {
    Image gray(1, map.dim(1), map.dim(2));
    for (int i = 0; i < plane; ++i) gray.data[static_cast<std::size_t>(i)] = values[static_cast<std::size_t>(k * plane + i)] / peak;
    written.push_back(directory / (stem + "_target" + std::to_string(k) + ".pgm"));
    write_pgm(written.back(), gray);
  }
  return written;
}

}  // namespace mnet
