#include "marionette/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mnet {

namespace {

using detail::check_finite;
using detail::record;

std::string dims_msg(const char* op, const std::string& what, const Shape& a, const Shape& b) {
  return std::string(op) + ": " + what + " (" + shape_str(a) + " vs " + shape_str(b) + ")";
}

Buffer* grad_of(const Tensor& t) {
  return t.requires_grad() ? &t.node()->grad_buffer() : nullptr;
}

// ---------------------------------------------------------------- broadcast

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out.resize(r);
  plan.stride_a.assign(r, 0);
  plan.stride_b.assign(r, 0);
  std::size_t acc_a = 1;
  std::size_t acc_b = 1;
  for (std::size_t i = r; i-- > 0;) {
    const int da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) throw ShapeError(dims_msg(op, "cannot broadcast", a, b));
    plan.out[i] = std::max(da, db);
    plan.stride_a[i] = da == 1 ? 0 : acc_a;
    plan.stride_b[i] = db == 1 ? 0 : acc_b;
    acc_a *= static_cast<std::size_t>(da);
    acc_b *= static_cast<std::size_t>(db);
  }
  return plan;
}

template <typename Fn>
void for_each_broadcast(const BroadcastPlan& plan, Fn&& fn) {
  const std::size_t n = shape_numel(plan.out);
  const int r = static_cast<int>(plan.out.size());
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (int d = r - 1; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      ++idx[ud];
      ia += plan.stride_a[ud];
      ib += plan.stride_b[ud];
      if (idx[ud] < plan.out[ud]) break;
      ia -= plan.stride_a[ud] * static_cast<std::size_t>(plan.out[ud]);
      ib -= plan.stride_b[ud] * static_cast<std::size_t>(plan.out[ud]);
      idx[ud] = 0;
    }
  }
}

// f(a, b) plus partials (df/da, df/db) evaluated at (a, b).
template <typename F, typename DF>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DF df) {
  check_finite(a, name);
  check_finite(b, name);
  const auto& av = a.data();
  const auto& bv = b.data();
  if (a.shape() == b.shape()) {
    Buffer out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
    return record(name, a.shape(), std::move(out), {a, b}, [a, b, df](const detail::Node& o) {
      auto* ga = grad_of(a);
      auto* gb = grad_of(b);
      const auto av2 = a.data();
      const auto bv2 = b.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const auto [pa, pb] = df(av2[i], bv2[i]);
        if (ga) (*ga)[i] += o.grad[i] * pa;
        if (gb) (*gb)[i] += o.grad[i] * pb;
      }
    });
  }
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), name);
  Buffer out(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(av[ia], bv[ib]); });
  Shape out_shape = plan.out;
  return record(name, std::move(out_shape), std::move(out), {a, b},
                [a, b, df, plan](const detail::Node& o) {
                  auto* ga = grad_of(a);
                  auto* gb = grad_of(b);
                  const auto av2 = a.data();
                  const auto bv2 = b.data();
                  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                    const auto [pa, pb] = df(av2[ia], bv2[ib]);
                    if (ga) (*ga)[ia] += o.grad[i] * pa;
                    if (gb) (*gb)[ib] += o.grad[i] * pb;
                  });
                });
}

template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& x, F f, DF df) {
  check_finite(x, name);
  const auto xv = x.data();
  Buffer out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return record(name, x.shape(), std::move(out), {x}, [x, df](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    const auto xv2 = x.data();
    for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i] * df(xv2[i], o.value[i]);
  });
}

// ------------------------------------------------------------------- conv

void im2col(const double* x, int channels, int height, int width, int k, int stride, int out_h, int out_w,
            double* cols) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + (static_cast<std::size_t>(c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ki - pad;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kj - pad;
            dst[ox] = (ix >= 0 && ix < width) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, int channels, int height, int width, int k, int stride, int out_h, int out_w,
            double* x) {
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + (static_cast<std::size_t>(c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ki - pad;
          if (iy < 0 || iy >= height) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = x + (static_cast<std::size_t>(c) * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kj - pad;
            if (ix >= 0 && ix < width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

// ------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return std::pair{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return std::pair{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y) { return std::pair{y, x}; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary_op(
      "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary_op(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ----------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const int ra = a.rank();
  const int rb = b.rank();
  if (ra < 2 || ra > 3 || rb < 2 || rb > 3 || (ra == 2 && rb == 3)) {
    throw ShapeError(dims_msg("matmul", "unsupported ranks", a.shape(), b.shape()));
  }
  const int batch = ra == 3 ? a.dim(0) : 1;
  const bool batched_b = rb == 3;
  if (batched_b && b.dim(0) != batch) throw ShapeError(dims_msg("matmul", "batch mismatch", a.shape(), b.shape()));
  const int m = a.dim(-2);
  const int k = a.dim(-1);
  const int kb = transpose_b ? b.dim(-1) : b.dim(-2);
  const int n = transpose_b ? b.dim(-2) : b.dim(-1);
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(k) + " vs " + std::to_string(kb) + ") for " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }

  const int b_rows = transpose_b ? n : k;
  const int b_cols = transpose_b ? k : n;
  const std::size_t a_step = static_cast<std::size_t>(m) * k;
  const std::size_t b_step = batched_b ? static_cast<std::size_t>(k) * n : 0;
  const std::size_t c_step = static_cast<std::size_t>(m) * n;

  Buffer out(static_cast<std::size_t>(batch) * c_step);
  if (!batched_b && !transpose_b) {
    // Shared right operand: one GEMM over all rows.
    ConstMatrixMap am(a.data().data(), batch * m, k);
    ConstMatrixMap bm(b.data().data(), k, n);
    MatrixMap(out.data(), batch * m, n).noalias() = am * bm;
  } else {
    for (int i = 0; i < batch; ++i) {
      ConstMatrixMap am(a.data().data() + i * a_step, m, k);
      ConstMatrixMap bm(b.data().data() + i * b_step, b_rows, b_cols);
      MatrixMap cm(out.data() + i * c_step, m, n);
      if (transpose_b) {
        cm.noalias() = am * bm.transpose();
      } else {
        cm.noalias() = am * bm;
      }
    }
  }

  Shape shape = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
  return record("matmul", std::move(shape), std::move(out), {a, b},
                [=](const detail::Node& o) {
                  auto* ga = grad_of(a);
                  auto* gb = grad_of(b);
                  for (int i = 0; i < batch; ++i) {
                    ConstMatrixMap gc(o.grad.data() + i * c_step, m, n);
                    ConstMatrixMap am(a.data().data() + i * a_step, m, k);
                    ConstMatrixMap bm(b.data().data() + i * b_step, b_rows, b_cols);
                    if (ga) {
                      MatrixMap gam(ga->data() + i * a_step, m, k);
                      if (transpose_b) {
                        gam.noalias() += gc * bm;
                      } else {
                        gam.noalias() += gc * bm.transpose();
                      }
                    }
                    if (gb) {
                      MatrixMap gbm(gb->data() + i * b_step, b_rows, b_cols);
                      if (transpose_b) {
                        gbm.noalias() += gc.transpose() * am;
                      } else {
                        gbm.noalias() += am.transpose() * gc;
                      }
                    }
                  }
                });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  check_finite(x, "linear");
  check_finite(weight, "linear");
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [out, in], got " + shape_str(weight.shape()));
  const int out_dim = weight.dim(0);
  const int in_dim = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_dim) {
    throw ShapeError(dims_msg("linear", "input features do not match weight", x.shape(), weight.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError(dims_msg("linear", "bias does not match weight", bias.shape(), weight.shape()));
  }
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(in_dim));
  Buffer out(static_cast<std::size_t>(rows) * out_dim);
  MatrixMap om(out.data(), rows, out_dim);
  om.noalias() = x.matrix(rows, in_dim) * weight.matrix(out_dim, in_dim).transpose();
  if (bias.defined()) om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.data().data(), out_dim);

  Shape shape = x.shape();
  shape.back() = out_dim;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record("linear", std::move(shape), std::move(out), inputs, [=](const detail::Node& o) {
    ConstMatrixMap g(o.grad.data(), rows, out_dim);
    if (auto* gx = grad_of(x)) MatrixMap(gx->data(), rows, in_dim).noalias() += g * weight.matrix(out_dim, in_dim);
    if (auto* gw = grad_of(weight)) {
      MatrixMap(gw->data(), out_dim, in_dim).noalias() += g.transpose() * x.matrix(rows, in_dim);
    }
    if (bias.defined()) {
      if (auto* gb = grad_of(bias)) Eigen::Map<Eigen::RowVectorXd>(gb->data(), out_dim) += g.colwise().sum();
    }
  });
}

// ------------------------------------------------------------------- conv

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  check_finite(x, "conv2d");
  check_finite(weight, "conv2d");
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [N, C, H, W], got " + shape_str(x.shape()));
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3) || weight.dim(2) % 2 == 0) {
    throw ShapeError("conv2d: weight must be [Cout, Cin, k, k] with odd k, got " + shape_str(weight.shape()));
  }
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError(dims_msg("conv2d", "input channels do not match weight", x.shape(), weight.shape()));
  }
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2, got " + std::to_string(stride));
  const int cout = weight.dim(0);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw ShapeError(dims_msg("conv2d", "bias does not match output channels", bias.shape(), weight.shape()));
  }
  const int n = x.dim(0);
  const int cin = x.dim(1);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int k = weight.dim(2);
  const int pad = k / 2;
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  const int patch = cin * k * k;
  const int plane = oh * ow;
  const bool direct = k == 1 && stride == 1;

  Buffer out(static_cast<std::size_t>(n) * cout * plane);
  Buffer cols(direct ? 0 : static_cast<std::size_t>(patch) * plane);
  ConstMatrixMap wm = weight.matrix(cout, patch);
  const std::size_t in_step = static_cast<std::size_t>(cin) * h * w;
  for (int i = 0; i < n; ++i) {
    const double* xi = x.data().data() + i * in_step;
    if (!direct) im2col(xi, cin, h, w, k, stride, oh, ow, cols.data());
    ConstMatrixMap colm(direct ? xi : cols.data(), patch, plane);
    MatrixMap om(out.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
    om.noalias() = wm * colm;
    if (bias.defined()) om.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data().data(), cout);
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return record("conv2d", {n, cout, oh, ow}, std::move(out), inputs, [=](const detail::Node& o) {
    auto* gx = grad_of(x);
    auto* gw = grad_of(weight);
    auto* gb = bias.defined() ? grad_of(bias) : nullptr;
    Buffer cols_b(direct ? 0 : static_cast<std::size_t>(patch) * plane);
    Buffer dcols(direct ? 0 : static_cast<std::size_t>(patch) * plane);
    ConstMatrixMap wm2 = weight.matrix(cout, patch);
    for (int i = 0; i < n; ++i) {
      ConstMatrixMap g(o.grad.data() + static_cast<std::size_t>(i) * cout * plane, cout, plane);
      const double* xi = x.data().data() + i * in_step;
      if (gw) {
        if (!direct) im2col(xi, cin, h, w, k, stride, oh, ow, cols_b.data());
        ConstMatrixMap colm(direct ? xi : cols_b.data(), patch, plane);
        MatrixMap(gw->data(), cout, patch).noalias() += g * colm.transpose();
      }
      if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), cout) += g.rowwise().sum();
      if (gx) {
        if (direct) {
          MatrixMap(gx->data() + i * in_step, patch, plane).noalias() += wm2.transpose() * g;
        } else {
          MatrixMap(dcols.data(), patch, plane).noalias() = wm2.transpose() * g;
          col2im(dcols.data(), cin, h, w, k, stride, oh, ow, gx->data() + i * in_step);
        }
      }
    }
  });
}

Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 4 || weight.dim(2) != 1 || weight.dim(3) != 1) {
    throw ShapeError("conv1x1: weight must be [Cout, Cin, 1, 1], got " + shape_str(weight.shape()));
  }
  return conv2d(x, weight, bias, 1);
}

// ---------------------------------------------------------- normalization

Tensor softmax_lastdim(const Tensor& x) {
  check_finite(x, "softmax_lastdim");
  if (x.rank() < 1) throw ShapeError("softmax_lastdim: needs rank >= 1");
  const int cols = x.dim(-1);
  const int rows = static_cast<int>(x.numel() / static_cast<std::size_t>(cols));
  Buffer out(x.numel());
  const auto xv = x.data();
  for (int r = 0; r < rows; ++r) {
    const double* src = xv.data() + static_cast<std::size_t>(r) * cols;
    double* dst = out.data() + static_cast<std::size_t>(r) * cols;
    const double peak = *std::max_element(src, src + cols);
    double total = 0.0;
    for (int c = 0; c < cols; ++c) total += dst[c] = std::exp(src[c] - peak);
    for (int c = 0; c < cols; ++c) dst[c] /= total;
  }
  return record("softmax_lastdim", x.shape(), std::move(out), {x}, [=](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (int r = 0; r < rows; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * cols;
      double dot = 0.0;
      for (int c = 0; c < cols; ++c) dot += o.grad[base + c] * o.value[base + c];
      for (int c = 0; c < cols; ++c) (*gx)[base + c] += o.value[base + c] * (o.grad[base + c] - dot);
    }
  });
}

Tensor instance_norm(const Tensor& x, double eps) {
  check_finite(x, "instance_norm");
  if (x.rank() != 4) throw ShapeError("instance_norm: input must be [N, C, H, W], got " + shape_str(x.shape()));
  const int groups = x.dim(0) * x.dim(1);
  const int plane = x.dim(2) * x.dim(3);
  Buffer out(x.numel());
  Buffer inv_std(static_cast<std::size_t>(groups));
  const auto xv = x.data();
  for (int g = 0; g < groups; ++g) {
    const std::size_t base = static_cast<std::size_t>(g) * plane;
    double mu = 0.0;
    for (int i = 0; i < plane; ++i) mu += xv[base + i];
    mu /= plane;
    double var = 0.0;
    for (int i = 0; i < plane; ++i) var += (xv[base + i] - mu) * (xv[base + i] - mu);
    var /= plane;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(g)] = is;
    for (int i = 0; i < plane; ++i) out[base + i] = (xv[base + i] - mu) * is;
  }
  return record("instance_norm", x.shape(), std::move(out), {x}, [=](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (int g = 0; g < groups; ++g) {
      const std::size_t base = static_cast<std::size_t>(g) * plane;
      double mean_g = 0.0;
      double mean_gy = 0.0;
      for (int i = 0; i < plane; ++i) {
        mean_g += o.grad[base + i];
        mean_gy += o.grad[base + i] * o.value[base + i];
      }
      mean_g /= plane;
      mean_gy /= plane;
      const double is = inv_std[static_cast<std::size_t>(g)];
      for (int i = 0; i < plane; ++i) {
        (*gx)[base + i] += is * (o.grad[base + i] - mean_g - o.value[base + i] * mean_gy);
      }
    }
  });
}

// --------------------------------------------------------------- resampling

Tensor avg_pool2d(const Tensor& x, int factor) {
  check_finite(x, "avg_pool2d");
  if (x.rank() != 4) throw ShapeError("avg_pool2d: input must be [N, C, H, W], got " + shape_str(x.shape()));
  const int h = x.dim(2);
  const int w = x.dim(3);
  if (factor < 1 || h % factor != 0 || w % factor != 0) {
    throw ShapeError("avg_pool2d: factor " + std::to_string(factor) + " does not divide spatial size " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  const int groups = x.dim(0) * x.dim(1);
  const int oh = h / factor;
  const int ow = w / factor;
  const double inv = 1.0 / (factor * factor);
  Buffer out(static_cast<std::size_t>(groups) * oh * ow, 0.0);
  const auto xv = x.data();
  for (int g = 0; g < groups; ++g) {
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        out[(static_cast<std::size_t>(g) * oh + y / factor) * ow + xx / factor] +=
            inv * xv[(static_cast<std::size_t>(g) * h + y) * w + xx];
      }
    }
  }
  return record("avg_pool2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x}, [=](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (int g = 0; g < groups; ++g) {
      for (int y = 0; y < h; ++y) {
        for (int xx = 0; xx < w; ++xx) {
          (*gx)[(static_cast<std::size_t>(g) * h + y) * w + xx] +=
              inv * o.grad[(static_cast<std::size_t>(g) * oh + y / factor) * ow + xx / factor];
        }
      }
    }
  });
}

Tensor nearest_upsample2d(const Tensor& x, int factor) {
  check_finite(x, "nearest_upsample2d");
  if (x.rank() != 4) {
    throw ShapeError("nearest_upsample2d: input must be [N, C, H, W], got " + shape_str(x.shape()));
  }
  if (factor < 1) throw ShapeError("nearest_upsample2d: factor must be positive");
  const int groups = x.dim(0) * x.dim(1);
  const int h = x.dim(2);
  const int w = x.dim(3);
  const int oh = h * factor;
  const int ow = w * factor;
  Buffer out(static_cast<std::size_t>(groups) * oh * ow);
  const auto xv = x.data();
  for (int g = 0; g < groups; ++g) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        out[(static_cast<std::size_t>(g) * oh + y) * ow + xx] = xv[(static_cast<std::size_t>(g) * h + y / factor) * w + xx / factor];
      }
    }
  }
  return record("nearest_upsample2d", {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
                [=](const detail::Node& o) {
                  auto* gx = grad_of(x);
                  if (!gx) return;
                  for (int g = 0; g < groups; ++g) {
                    for (int y = 0; y < oh; ++y) {
                      for (int xx = 0; xx < ow; ++xx) {
                        (*gx)[(static_cast<std::size_t>(g) * h + y / factor) * w + xx / factor] +=
                            o.grad[(static_cast<std::size_t>(g) * oh + y) * ow + xx];
                      }
                    }
                  }
                });
}

// ------------------------------------------------------------------ layout

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const Tensor& first = parts.front();
  if (first.rank() < 2) throw ShapeError("concat_channels: inputs need rank >= 2, got " + shape_str(first.shape()));
  int channels = 0;
  for (const Tensor& p : parts) {
    check_finite(p, "concat_channels");
    bool ok = p.rank() == first.rank();
    for (int d = 0; ok && d < first.rank(); ++d) ok = d == 1 || p.dim(d) == first.dim(d);
    if (!ok) throw ShapeError(dims_msg("concat_channels", "non-channel dimensions differ", first.shape(), p.shape()));
    channels += p.dim(1);
  }
  const int outer = first.dim(0);
  const std::size_t inner = first.numel() / (static_cast<std::size_t>(outer) * first.dim(1));
  Shape shape = first.shape();
  shape[1] = channels;
  Buffer out(shape_numel(shape));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t block = static_cast<std::size_t>(p.dim(1)) * inner;
    for (int i = 0; i < outer; ++i) {
      std::copy_n(p.data().data() + i * block, block, out.data() + i * channels * inner + offset);
    }
    offset += block;
  }
  return record("concat_channels", std::move(shape), std::move(out), inputs, [=](const detail::Node& o) {
    std::size_t off = 0;
    for (const Tensor& p : inputs) {
      const std::size_t block = static_cast<std::size_t>(p.dim(1)) * inner;
      if (auto* gp = grad_of(p)) {
        for (int i = 0; i < outer; ++i) {
          const double* src = o.grad.data() + i * channels * inner + off;
          double* dst = gp->data() + i * block;
          for (std::size_t j = 0; j < block; ++j) dst[j] += src[j];
        }
      }
      off += block;
    }
  });
}

Tensor concat_channels(std::initializer_list<Tensor> parts) {
  return concat_channels(std::span<const Tensor>(parts.begin(), parts.size()));
}

Tensor mean_over_axis(const Tensor& x, int axis) {
  check_finite(x, "mean_over_axis");
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("mean_over_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(x.dim(d));
  for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(x.dim(d));
  const int len = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + axis);
  Buffer out(outer * inner, 0.0);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (int a = 0; a < len; ++a) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xv[(o * len + a) * inner + i];
    }
  }
  for (double& v : out) v /= len;
  return record("mean_over_axis", std::move(shape), std::move(out), {x}, [=](const detail::Node& n) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o) {
      for (int a = 0; a < len; ++a) {
        for (std::size_t i = 0; i < inner; ++i) (*gx)[(o * len + a) * inner + i] += n.grad[o * inner + i] / len;
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  check_finite(x, "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  return record("sum", {}, {total}, {x}, [x](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (double& g : *gx) g += o.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError(dims_msg("reshape", "element count differs", x.shape(), shape));
  }
  Buffer out(x.data().begin(), x.data().end());
  return record("reshape", shape, std::move(out), {x}, [x](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) (*gx)[i] += o.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r) throw ShapeError("permute: permutation length differs from rank");
  std::vector<int> check = perm;
  std::sort(check.begin(), check.end());
  for (int i = 0; i < r; ++i) {
    if (check[static_cast<std::size_t>(i)] != i) throw ShapeError("permute: not a permutation");
  }
  std::vector<std::size_t> in_stride(static_cast<std::size_t>(r), 1);
  for (int d = r - 2; d >= 0; --d) in_stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(d) + 1] * x.dim(d + 1);
  Shape shape(static_cast<std::size_t>(r));
  std::vector<std::size_t> src_stride(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) {
    shape[static_cast<std::size_t>(d)] = x.dim(perm[static_cast<std::size_t>(d)]);
    src_stride[static_cast<std::size_t>(d)] = in_stride[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];
  }
  // Output flat index -> input flat index.
  std::vector<std::size_t> index(x.numel());
  {
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < index.size(); ++o) {
      index[o] = src;
      for (int d = r - 1; d >= 0; --d) {
        const auto ud = static_cast<std::size_t>(d);
        ++idx[ud];
        src += src_stride[ud];
        if (idx[ud] < shape[ud]) break;
        src -= src_stride[ud] * static_cast<std::size_t>(shape[ud]);
        idx[ud] = 0;
      }
    }
  }
  Buffer out(x.numel());
  const auto xv = x.data();
  for (std::size_t o = 0; o < out.size(); ++o) out[o] = xv[index[o]];
  return record("permute", std::move(shape), std::move(out), {x}, [x, index = std::move(index)](const detail::Node& o) {
    auto* gx = grad_of(x);
    if (!gx) return;
    for (std::size_t i = 0; i < index.size(); ++i) (*gx)[index[i]] += o.grad[i];
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be [rows, dim], got " + shape_str(table.shape()));
  const int rows = table.dim(0);
  const int dim = table.dim(1);
  std::vector<int> picked(ids.begin(), ids.end());
  if (picked.empty()) throw ShapeError("embedding: no ids");
  Buffer out(picked.size() * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < picked.size(); ++i) {
    if (picked[i] < 0 || picked[i] >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(picked[i]) + " outside [0, " + std::to_string(rows) + ")");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(picked[i]) * dim, dim, out.data() + i * dim);
  }
  return record("embedding", {static_cast<int>(picked.size()), dim}, std::move(out), {table},
                [table, picked, dim](const detail::Node& o) {
                  auto* gt = grad_of(table);
                  if (!gt) return;
                  for (std::size_t i = 0; i < picked.size(); ++i) {
                    for (int j = 0; j < dim; ++j) (*gt)[static_cast<std::size_t>(picked[i]) * dim + j] += o.grad[i * dim + j];
                  }
                });
}

// ---------------------------------------------------------------- dispatch

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kConv1x1: return "conv1x1";
    case OpKind::kRelu: return "relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSoftmaxLastdim: return "softmax_lastdim";
    case OpKind::kInstanceNorm: return "instance_norm";
    case OpKind::kAvgPool2d: return "avg_pool2d";
    case OpKind::kNearestUpsample2d: return "nearest_upsample2d";
    case OpKind::kConcatChannels: return "concat_channels";
    case OpKind::kMeanOverAxis: return "mean_over_axis";
    case OpKind::kLinear: return "linear";
  }
  return "unknown";
}

std::vector<OpKind> all_op_kinds() {
  return {OpKind::kAdd,           OpKind::kMul,          OpKind::kMatmul,           OpKind::kConv2d,
          OpKind::kConv1x1,       OpKind::kRelu,         OpKind::kTanh,             OpKind::kSoftmaxLastdim,
          OpKind::kInstanceNorm,  OpKind::kAvgPool2d,    OpKind::kNearestUpsample2d, OpKind::kConcatChannels,
          OpKind::kMeanOverAxis,  OpKind::kLinear};
}

Tensor forward(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (inputs.size() < lo || inputs.size() > hi) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(lo) + ".." +
                                  std::to_string(hi) + " inputs, got " + std::to_string(inputs.size()));
    }
  };
  auto opt = [&](std::size_t i) { return i < inputs.size() ? inputs[i] : Tensor{}; };
  switch (kind) {
    case OpKind::kAdd: need(2, 2); return add(inputs[0], inputs[1]);
    case OpKind::kMul: need(2, 2); return mul(inputs[0], inputs[1]);
    case OpKind::kMatmul: need(2, 2); return matmul(inputs[0], inputs[1], attrs.transpose_b);
    case OpKind::kConv2d: need(2, 3); return conv2d(inputs[0], inputs[1], opt(2), attrs.stride);
    case OpKind::kConv1x1: need(2, 3); return conv1x1(inputs[0], inputs[1], opt(2));
    case OpKind::kRelu: need(1, 1); return relu(inputs[0]);
    case OpKind::kTanh: need(1, 1); return tanh(inputs[0]);
    case OpKind::kSoftmaxLastdim: need(1, 1); return softmax_lastdim(inputs[0]);
    case OpKind::kInstanceNorm: need(1, 1); return instance_norm(inputs[0], attrs.eps);
    case OpKind::kAvgPool2d: need(1, 1); return avg_pool2d(inputs[0], attrs.factor);
    case OpKind::kNearestUpsample2d: need(1, 1); return nearest_upsample2d(inputs[0], attrs.factor);
    case OpKind::kConcatChannels: need(1, 64); return concat_channels(inputs);
    case OpKind::kMeanOverAxis: need(1, 1); return mean_over_axis(inputs[0], attrs.axis);
    case OpKind::kLinear: need(2, 3); return linear(inputs[0], inputs[1], opt(2));
  }
  throw std::invalid_argument("unknown op kind");
}

}  // namespace mnet
