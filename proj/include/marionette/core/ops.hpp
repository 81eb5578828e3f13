#pragma once

#include <initializer_list>
#include <span>
#include <string_view>
#include <vector>

#include "marionette/core/tensor.hpp"

namespace mnet {

// Elementwise binary ops broadcast numpy-style (shapes right-aligned, size-1
// dimensions stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);

// [m,k]x[k,n], [B,m,k]x[k,n] (shared right operand) or [B,m,k]x[B,k,n].
// With transpose_b the right operand is given as [..., n, k].
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// x: [..., in], weight: [out, in], bias: [out] (optional) -> [..., out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// x: [N, Cin, H, W], weight: [Cout, Cin, k, k] with odd k, zero padding k/2.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias = {}, int stride = 1);
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor softmax_lastdim(const Tensor& x);

// Per (sample, channel) standardization over the spatial axes, no affine.
inline constexpr double kInstanceNormEps = 1e-5;
Tensor instance_norm(const Tensor& x, double eps = kInstanceNormEps);

Tensor avg_pool2d(const Tensor& x, int factor);
Tensor nearest_upsample2d(const Tensor& x, int factor);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(std::initializer_list<Tensor> parts);

// Removes `axis`.
Tensor mean_over_axis(const Tensor& x, int axis);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);

// Rows of `table` ([rows, dim]) picked by `ids` -> [ids.size(), dim].
Tensor embedding(const Tensor& table, std::span<const int> ids);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

// Generic dispatch over the primitive set.
enum class OpKind {
  kAdd,
  kMul,
  kMatmul,
  kConv2d,
  kConv1x1,
  kRelu,
  kTanh,
  kSoftmaxLastdim,
  kInstanceNorm,
  kAvgPool2d,
  kNearestUpsample2d,
  kConcatChannels,
  kMeanOverAxis,
  kLinear,
};

struct OpAttrs {
  int stride = 1;
  int factor = 2;
  int axis = 0;
  bool transpose_b = false;
  double eps = kInstanceNormEps;
};

std::string_view op_name(OpKind kind);
std::vector<OpKind> all_op_kinds();
Tensor forward(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace mnet
