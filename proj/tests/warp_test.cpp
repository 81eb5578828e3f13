#include <gtest/gtest.h>

#include <cmath>

#include "marionette/core/gradcheck.hpp"
#include "marionette/core/ops.hpp"
#include "marionette/model/warp.hpp"
#include "test_util.hpp"

namespace mnet {
namespace {

using testing::random_tensor;

Tensor constant_flow(int n, int h, int w, double fx, double fy, bool requires_grad = false) {
  std::vector<double> v;
  for (int b = 0; b < n; ++b) {
    v.insert(v.end(), static_cast<std::size_t>(h) * w, fx);
    v.insert(v.end(), static_cast<std::size_t>(h) * w, fy);
  }
  return Tensor::from({n, 2, h, w}, std::move(v), requires_grad);
}

// Flow whose sample positions land strictly between grid points.
Tensor fractional_flow(int n, int h, int w, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(static_cast<std::size_t>(n) * 2 * h * w);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool horizontal = (i / (static_cast<std::size_t>(h) * w)) % 2 == 0;
    const double half = 0.5 * ((horizontal ? w : h) - 1);
    const double pixels = std::floor(rng.uniform(-2.0, 2.0)) + rng.uniform(0.2, 0.8);
    v[i] = pixels / half;
  }
  return Tensor::from({n, 2, h, w}, std::move(v), requires_grad);
}

TEST(BilinearWarp, ZeroFlowIsBitExactIdentity) {
  Rng rng(1);
  const Tensor s = random_tensor({2, 3, 5, 7}, rng, 1.0, false);
  const Tensor out = bilinear_warp(s, Tensor::zeros({2, 2, 5, 7}));
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(out.data()[i], s.data()[i]);
}

TEST(BilinearWarp, IntegerShiftMovesColumnsAndZeroPads) {
  Rng rng(2);
  const int h = 4, w = 6;
  const Tensor s = random_tensor({1, 2, h, w}, rng, 1.0, false);
  // Sample one pixel to the left: output column j reads input column j - 1.
  const Tensor out = bilinear_warp(s, constant_flow(1, h, w, -2.0 / (w - 1), 0.0));
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < h; ++y) {
      const std::size_t row = (static_cast<std::size_t>(c) * h + y) * w;
      EXPECT_EQ(out.data()[row], 0.0);
      for (int x = 1; x < w; ++x) EXPECT_NEAR(out.data()[row + x], s.data()[row + x - 1], 1e-15);
    }
  }
  const Tensor down = bilinear_warp(s, constant_flow(1, h, w, 0.0, 2.0 / (h - 1)));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y + 1 < h; ++y) EXPECT_NEAR(down.data()[static_cast<std::size_t>(y) * w + x], s.data()[static_cast<std::size_t>(y + 1) * w + x], 1e-15);
    EXPECT_EQ(down.data()[static_cast<std::size_t>(h - 1) * w + x], 0.0);
  }
}

TEST(BilinearWarp, HalfPixelShiftAveragesNeighbours) {
  const Tensor s = Tensor::from({1, 1, 1, 4}, {0.0, 2.0, 4.0, 8.0});
  const Tensor out = bilinear_warp(s, constant_flow(1, 1, 4, 0.5 * 2.0 / 3.0, 0.0));
  EXPECT_NEAR(out.data()[0], 1.0, 1e-15);
  EXPECT_NEAR(out.data()[1], 3.0, 1e-15);
  EXPECT_NEAR(out.data()[2], 6.0, 1e-15);
  EXPECT_NEAR(out.data()[3], 4.0, 1e-15);  // half the weight falls off the edge
}

TEST(BilinearWarp, LinearInFeatures) {
  Rng rng(3);
  const Tensor a = random_tensor({1, 2, 5, 5}, rng, 1.0, false);
  const Tensor b = random_tensor({1, 2, 5, 5}, rng, 1.0, false);
  const Tensor f = fractional_flow(1, 5, 5, rng, false);
  const Tensor lhs = bilinear_warp(2.5 * a + (-1.5) * b, f);
  const Tensor rhs = 2.5 * bilinear_warp(a, f) + (-1.5) * bilinear_warp(b, f);
  for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs.data()[i], rhs.data()[i], 1e-12);
}

TEST(BilinearWarp, ShiftThereAndBackRecoversSmoothInterior) {
  const int h = 16, w = 16;
  std::vector<double> v(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) v[static_cast<std::size_t>(y) * w + x] = std::sin(0.3 * x) * std::cos(0.2 * y);
  }
  const Tensor s = Tensor::from({1, 1, h, w}, v);
  const double dx = 0.37, dy = -0.61;  // pixels
  const Tensor there = bilinear_warp(s, constant_flow(1, h, w, dx * 2 / (w - 1), dy * 2 / (h - 1)));
  const Tensor back = bilinear_warp(there, constant_flow(1, h, w, -dx * 2 / (w - 1), -dy * 2 / (h - 1)));
  // Per-pixel Lipschitz bound of the field: |grad| <= 0.3 + 0.2 per pixel step.
  const double lipschitz = 0.5;
  for (int y = 2; y < h - 2; ++y) {
    for (int x = 2; x < w - 2; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      EXPECT_LT(std::abs(back.data()[i] - s.data()[i]), lipschitz * 2 * (std::abs(dx) + std::abs(dy)));
    }
  }
}

TEST(BilinearWarp, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor s = random_tensor({2, 3, 4, 5}, rng);
    Tensor f = fractional_flow(2, 4, 5, rng);
    const Tensor proj = random_tensor({2, 3, 4, 5}, rng, 1.0, false);
    const auto report =
        grad_check([&] { return sum(bilinear_warp(s, f) * proj); }, std::vector<NamedTensor>{{"s", s}, {"flow", f}});
    EXPECT_TRUE(report.passed) << report.max_rel_error;
  }
}

TEST(BilinearWarp, SizeMismatchRejected) {
  EXPECT_THROW(bilinear_warp(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 2, 2, 2})), ShapeError);
  EXPECT_THROW(bilinear_warp(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 3, 4, 4})), ShapeError);
}

TEST(DownsampleFlow, PoolsWithoutRescaling) {
  const Tensor c = constant_flow(1, 8, 8, 0.3, -0.7);
  const Tensor d = downsample_flow(c, 2, 2);
  ASSERT_EQ(d.shape(), (Shape{1, 2, 2, 2}));
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(d.data()[static_cast<std::size_t>(i)], 0.3, 1e-15);
    EXPECT_NEAR(d.data()[4 + static_cast<std::size_t>(i)], -0.7, 1e-15);
  }
  const Tensor f = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor one = downsample_flow(f, 1, 1);
  EXPECT_DOUBLE_EQ(one.data()[0], 2.5);
  EXPECT_DOUBLE_EQ(one.data()[1], 6.5);
  EXPECT_THROW(downsample_flow(c, 3, 3), ShapeError);
  EXPECT_THROW(downsample_flow(c, 4, 2), ShapeError);
}

TEST(DownsampleFlow, CommutesWithWarpOnConstantImages) {
  Rng rng(5);
  const Tensor img = Tensor::full({1, 2, 8, 8}, 1.75);
  const Tensor f = Tensor::from({1, 2, 8, 8}, [&] {
    std::vector<double> v(128);
    for (double& x : v) x = rng.uniform(-0.1, 0.1);
    return v;
  }());
  // Interior sample points keep reading the constant, so both orders agree.
  const Tensor a = avg_pool2d(bilinear_warp(img, f), 2);
  const Tensor b = bilinear_warp(avg_pool2d(img, 2), downsample_flow(f, 4, 4));
  const std::vector<int> interior = {5, 6, 9, 10};
  for (int c = 0; c < 2; ++c) {
    for (int i : interior) EXPECT_NEAR(a.data()[static_cast<std::size_t>(c * 16 + i)], b.data()[static_cast<std::size_t>(c * 16 + i)], 1e-9);
  }
}

TEST(NormalizeTargetFeatures, ZeroFlowIdentityAndGradientReachesFlow) {
  Rng rng(6);
  std::vector<Tensor> levels = {random_tensor({1, 2, 16, 16}, rng, 1.0, false), random_tensor({1, 4, 8, 8}, rng, 1.0, false),
                                random_tensor({1, 8, 4, 4}, rng, 1.0, false), random_tensor({1, 8, 2, 2}, rng, 1.0, false)};
  const auto same = normalize_target_features(levels, Tensor::zeros({1, 2, 16, 16}));
  for (std::size_t j = 0; j < levels.size(); ++j) {
    for (std::size_t i = 0; i < levels[j].numel(); ++i) ASSERT_EQ(same[j].data()[i], levels[j].data()[i]);
  }

  for (std::size_t only = 0; only < levels.size(); ++only) {
    Tensor f = fractional_flow(1, 16, 16, rng);
    const auto warped = normalize_target_features(levels, scale(f, 0.1));
    sum(square(warped[only])).backward();
    double norm = 0;
    for (double g : f.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << "level " << only;
  }
}

TEST(AverageTargets, Examples) {
  Rng rng(7);
  const std::vector<Tensor> a = {random_tensor({1, 2, 4, 4}, rng, 1.0, false), random_tensor({1, 3, 2, 2}, rng, 1.0, false)};
  const std::vector<std::vector<Tensor>> single = {a};
  const auto one = average_targets(single);
  EXPECT_EQ(one[0].data()[5], a[0].data()[5]);
  const std::vector<std::vector<Tensor>> twice = {a, a};
  const auto two = average_targets(twice);
  for (std::size_t j = 0; j < 2; ++j) {
    for (std::size_t i = 0; i < a[j].numel(); ++i) EXPECT_NEAR(two[j].data()[i], a[j].data()[i], 1e-15);
  }
  const std::vector<std::vector<Tensor>> zero_two = {{Tensor::zeros({1, 1, 2, 2})}, {Tensor::full({1, 1, 2, 2}, 2.0)}};
  const auto mid = average_targets(zero_two);
  for (double v : mid[0].data()) EXPECT_EQ(v, 1.0);
  const std::vector<std::vector<Tensor>> bad = {{Tensor::zeros({1, 1, 2, 2})}, {Tensor::zeros({1, 2, 2, 2})}};
  EXPECT_THROW(average_targets(bad), ShapeError);

  // Batched form agrees with the list form.
  const Tensor stacked = Tensor::from({2, 1, 2, 2}, {0, 0, 0, 0, 2, 2, 2, 2});
  const Tensor batched = mean_over_targets(stacked, 2);
  for (double v : batched.data()) EXPECT_EQ(v, 1.0);
}

TEST(WarpAlignBlock, ZeroConvGivesUnwarpedConcat) {
  ParameterStore store;
  Rng rng(8);
  WarpAlignBlock block(store, "wa", 3, rng);
  std::fill(block.flow_conv.weight.mutable_data().begin(), block.flow_conv.weight.mutable_data().end(), 0.0);
  block.flow_conv.sn = nullptr;
  const Tensor u = random_tensor({1, 3, 4, 4}, rng, 1.0, false);
  const Tensor s = random_tensor({1, 5, 4, 4}, rng, 1.0, false);
  const Tensor out = block(u, s);
  ASSERT_EQ(out.shape(), (Shape{1, 8, 4, 4}));
  for (std::size_t i = 0; i < u.numel(); ++i) EXPECT_EQ(out.data()[i], u.data()[i]);
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(out.data()[u.numel() + i], s.data()[i]);
  EXPECT_THROW(block(u, random_tensor({1, 5, 2, 2}, rng, 1.0, false)), ShapeError);
}

TEST(WarpAlignBlock, FlowIsBoundedAndGradientChecks) {
  ParameterStore store;
  Rng rng(9);
  WarpAlignBlock block(store, "wa", 3, rng);
  Tensor u = random_tensor({1, 3, 4, 4}, rng, 0.3);
  Tensor s = random_tensor({1, 2, 4, 4}, rng);
  const Tensor wild = block.flow(random_tensor({1, 3, 4, 4}, rng, 100.0, false));
  for (double v : wild.data()) EXPECT_LE(std::abs(v), 2.0);
  const Tensor proj = random_tensor({1, 5, 4, 4}, rng, 1.0, false);
  auto params = store.named();
  params.push_back({"u", u});
  params.push_back({"s", s});
  const auto report = grad_check([&] { return sum(block(u, s) * proj); }, params);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

}  // namespace
}  // namespace mnet
