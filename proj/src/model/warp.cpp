#include "marionette/model/warp.hpp"

#include <cmath>

#include "marionette/core/ops.hpp"

namespace mnet {

namespace {

Buffer* grad_of(const Tensor& t) { return t.requires_grad() ? &t.node()->grad_buffer() : nullptr; }

}  // namespace

Tensor bilinear_warp(const Tensor& s, const Tensor& flow) {
  detail::check_finite(s, "bilinear_warp");
  detail::check_finite(flow, "bilinear_warp");
  if (s.rank() != 4) throw ShapeError("bilinear_warp: features must be [N, C, H, W], got " + shape_str(s.shape()));
  if (flow.rank() != 4 || flow.dim(1) != 2 || flow.dim(0) != s.dim(0) || flow.dim(2) != s.dim(2) || flow.dim(3) != s.dim(3)) {
    throw ShapeError("bilinear_warp: flow " + shape_str(flow.shape()) + " does not match features " + shape_str(s.shape()) +
                     " (expected [N, 2, H, W])");
  }
  const int n = s.dim(0);
  const int c = s.dim(1);
  const int h = s.dim(2);
  const int w = s.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const double half_w = 0.5 * (w - 1);
  const double half_h = 0.5 * (h - 1);

  // Per output pixel: top-left corner and fractional offsets.
  std::vector<int> x0s(static_cast<std::size_t>(n) * plane);
  std::vector<int> y0s(x0s.size());
  Buffer axs(x0s.size());
  Buffer ays(x0s.size());
  const auto fv = flow.data();
  for (int b = 0; b < n; ++b) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const std::size_t i = b * plane + p;
        const double sx = x + fv[(2 * static_cast<std::size_t>(b)) * plane + p] * half_w;
        const double sy = y + fv[(2 * static_cast<std::size_t>(b) + 1) * plane + p] * half_h;
        const double fx = std::floor(sx);
        const double fy = std::floor(sy);
        x0s[i] = static_cast<int>(fx);
        y0s[i] = static_cast<int>(fy);
        axs[i] = sx - fx;
        ays[i] = sy - fy;
      }
    }
  }

  auto inside = [h, w](int yy, int xx) { return yy >= 0 && yy < h && xx >= 0 && xx < w; };
  const auto sv = s.data();
  Buffer out(s.numel(), 0.0);
  for (int b = 0; b < n; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = b * plane + p;
      const int x0 = x0s[i];
      const int y0 = y0s[i];
      const double ax = axs[i];
      const double ay = ays[i];
      const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
      const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
      const double wt[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      for (int k = 0; k < 4; ++k) {
        if (wt[k] == 0.0 || !inside(cy[k], cx[k])) continue;
        const std::size_t q = static_cast<std::size_t>(cy[k]) * w + cx[k];
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
          out[base + p] += wt[k] * sv[base + q];
        }
      }
    }
  }

  return detail::record(
      "bilinear_warp", s.shape(), std::move(out), {s, flow},
      [=, x0s = std::move(x0s), y0s = std::move(y0s), axs = std::move(axs), ays = std::move(ays)](const detail::Node& o) {
        auto* gs = grad_of(s);
        auto* gf = grad_of(flow);
        const auto values = s.data();
        auto sample = [&](std::size_t base, int yy, int xx) {
          return inside(yy, xx) ? values[base + static_cast<std::size_t>(yy) * w + xx] : 0.0;
        };
        for (int b = 0; b < n; ++b) {
          for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t i = b * plane + p;
            const int x0 = x0s[i];
            const int y0 = y0s[i];
            const double ax = axs[i];
            const double ay = ays[i];
            double dsx = 0.0;
            double dsy = 0.0;
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t base = (static_cast<std::size_t>(b) * c + ch) * plane;
              const double g = o.grad[base + p];
              if (g == 0.0) continue;
              if (gs) {
                const int cx[4] = {x0, x0 + 1, x0, x0 + 1};
                const int cy[4] = {y0, y0, y0 + 1, y0 + 1};
                const double wt[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
                for (int k = 0; k < 4; ++k) {
                  if (wt[k] != 0.0 && inside(cy[k], cx[k])) (*gs)[base + static_cast<std::size_t>(cy[k]) * w + cx[k]] += g * wt[k];
                }
              }
              if (gf) {
                const double v00 = sample(base, y0, x0);
                const double v01 = sample(base, y0, x0 + 1);
                const double v10 = sample(base, y0 + 1, x0);
                const double v11 = sample(base, y0 + 1, x0 + 1);
                dsx += g * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
                dsy += g * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
              }
            }
            if (gf) {
              (*gf)[(2 * static_cast<std::size_t>(b)) * plane + p] += dsx * half_w;
              (*gf)[(2 * static_cast<std::size_t>(b) + 1) * plane + p] += dsy * half_h;
            }
          }
        }
      });
}

Tensor downsample_flow(const Tensor& flow, int h, int w) {
  if (flow.rank() != 4 || flow.dim(1) != 2) throw ShapeError("downsample_flow: expected [N, 2, H, W], got " + shape_str(flow.shape()));
  if (h < 1 || w < 1 || flow.dim(2) % h != 0 || flow.dim(3) % w != 0 || flow.dim(2) / h != flow.dim(3) / w) {
    throw ShapeError("downsample_flow: cannot pool " + std::to_string(flow.dim(2)) + "x" + std::to_string(flow.dim(3)) +
                     " to " + std::to_string(h) + "x" + std::to_string(w));
  }
  const int factor = flow.dim(2) / h;
  return factor == 1 ? flow : avg_pool2d(flow, factor);
}

std::vector<Tensor> normalize_target_features(std::span<const Tensor> levels, const Tensor& flow) {
  std::vector<Tensor> out;
  out.reserve(levels.size());
  for (const Tensor& s : levels) out.push_back(bilinear_warp(s, downsample_flow(flow, s.dim(2), s.dim(3))));
  return out;
}

std::vector<Tensor> average_targets(std::span<const std::vector<Tensor>> sets) {
  if (sets.empty()) throw ShapeError("average_targets: no target sets");
  const std::size_t levels = sets.front().size();
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < levels; ++j) {
    Tensor acc = sets.front()[j];
    for (std::size_t i = 1; i < sets.size(); ++i) {
      if (sets[i].size() != levels) throw ShapeError("average_targets: target sets have different level counts");
      if (sets[i][j].shape() != acc.shape()) {
        throw ShapeError("average_targets: level " + std::to_string(j) + " shapes " + shape_str(acc.shape()) + " and " +
                         shape_str(sets[i][j].shape()) + " differ");
      }
      acc = acc + sets[i][j];
    }
    out.push_back(sets.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(sets.size())));
  }
  return out;
}

Tensor mean_over_targets(const Tensor& x, int k) {
  if (x.rank() != 4 || k < 1 || x.dim(0) % k != 0) {
    throw ShapeError("mean_over_targets: batch of " + shape_str(x.shape()) + " is not a multiple of K=" + std::to_string(k));
  }
  if (k == 1) return x;
  return mean_over_axis(reshape(x, {x.dim(0) / k, k, x.dim(1), x.dim(2), x.dim(3)}), 1);
}

WarpAlignBlock::WarpAlignBlock(ParameterStore& store, const std::string& name, int u_channels, Rng& rng)
    : flow_conv(store, name + ".flow", u_channels, 2, 1, rng) {}

Tensor WarpAlignBlock::flow(const Tensor& u) const { return scale(tanh(flow_conv(u)), kDecoderFlowScale); }

Tensor WarpAlignBlock::operator()(const Tensor& u, const Tensor& s) const {
  if (u.rank() != 4 || s.rank() != 4 || u.dim(0) != s.dim(0) || u.dim(2) != s.dim(2) || u.dim(3) != s.dim(3)) {
    throw ShapeError("warp_alignment_block: decoder features " + shape_str(u.shape()) + " and target features " +
                     shape_str(s.shape()) + " differ in batch or spatial size");
  }
  return concat_channels({u, bilinear_warp(s, flow(u))});
}

}  // namespace mnet
