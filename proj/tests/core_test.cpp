#include <cmath>
#include <limits>

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include "marionette/core/checkpoint.hpp"
#include "marionette/core/gradcheck.hpp"
#include "marionette/core/ops.hpp"
#include "marionette/core/optim.hpp"
#include "marionette/core/params.hpp"
#include "test_util.hpp"

namespace mnet {
namespace {

GradCheckOptions tolerance(double t) {
  GradCheckOptions o;
  o.tolerance = t;
  return o;
}

using testing::random_tensor;
using testing::random_tensor_off_zero;

TEST(Ops, ReluClampsNegatives) {
  const Tensor y = relu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
}

TEST(Ops, SoftmaxRowsArePositiveAndSumToOne) {
  Rng rng(3);
  const Tensor y = softmax_lastdim(random_tensor({4, 5, 7}, rng, 10.0, false));
  for (int r = 0; r < 20; ++r) {
    double total = 0.0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GT(y[r * 7 + c], 0.0);
      total += y[r * 7 + c];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Ops, InstanceNormOfConstantChannelIsZero) {
  const Tensor y = instance_norm(Tensor::full({1, 2, 3, 3}, 4.5));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Ops, InstanceNormStandardizesEachChannel) {
  Rng rng(11);
  const Tensor y = instance_norm(random_tensor({2, 3, 5, 4}, rng, 3.0, false));
  for (int g = 0; g < 6; ++g) {
    double m = 0.0;
    double v = 0.0;
    for (int i = 0; i < 20; ++i) m += y[g * 20 + i];
    m /= 20;
    for (int i = 0; i < 20; ++i) v += (y[g * 20 + i] - m) * (y[g * 20 + i] - m);
    v /= 20;
    EXPECT_LT(std::abs(m), 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
}

TEST(Ops, StrideOneConvPreservesSpatialSize) {
  Rng rng(1);
  const Tensor y = conv2d(random_tensor({2, 3, 7, 5}, rng), random_tensor({4, 3, 3, 3}, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 4, 7, 5}));
  const Tensor z = conv2d(random_tensor({1, 3, 8, 8}, rng), random_tensor({2, 3, 3, 3}, rng), {}, 2);
  EXPECT_EQ(z.shape(), (Shape{1, 2, 4, 4}));
}

TEST(Ops, ConvMatchesDirectSummation) {
  Rng rng(5);
  const Tensor x = random_tensor({1, 2, 4, 5}, rng, 1.0, false);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng, 1.0, false);
  const Tensor b = random_tensor({3}, rng, 1.0, false);
  const Tensor y = conv2d(x, w, b);
  for (int o = 0; o < 3; ++o) {
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 5; ++j) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int c = 0; c < 2; ++c) {
          for (int di = -1; di <= 1; ++di) {
            for (int dj = -1; dj <= 1; ++dj) {
              const int yi = i + di;
              const int xj = j + dj;
              if (yi < 0 || yi >= 4 || xj < 0 || xj >= 5) continue;
              acc += w[static_cast<std::size_t>(((o * 2 + c) * 3 + di + 1) * 3 + dj + 1)] *
                     x[static_cast<std::size_t>((c * 4 + yi) * 5 + xj)];
            }
          }
        }
        EXPECT_NEAR(y[static_cast<std::size_t>((o * 4 + i) * 5 + j)], acc, 1e-12);
      }
    }
  }
}

TEST(Ops, ShapeMismatchNamesDimensions) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    (void)matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3"), std::string::npos);
    EXPECT_NE(msg.find("4"), std::string::npos);
  }
  EXPECT_THROW((void)add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
}

TEST(Ops, NonFiniteInputRejected) {
  const Tensor bad = Tensor::from({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW((void)relu(bad), std::domain_error);
  EXPECT_THROW((void)add(bad, bad), std::domain_error);
}

TEST(Ops, BroadcastAddMatchesExplicitLoop) {
  Rng rng(2);
  const Tensor a = random_tensor({2, 3, 4}, rng, 1.0, false);
  const Tensor b = random_tensor({3, 1}, rng, 1.0, false);
  const Tensor c = a + b;
  ASSERT_EQ(c.shape(), (Shape{2, 3, 4}));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 4; ++k) EXPECT_EQ(c[(i * 3 + j) * 4 + k], a[(i * 3 + j) * 4 + k] + b[j]);
}

TEST(Autodiff, QuadraticGradient) {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  sum(w * w).backward();
  EXPECT_EQ(w.grad()[0], 2.0);
  EXPECT_EQ(w.grad()[1], 4.0);
}

TEST(Autodiff, PiecewiseReluMeanGradient) {
  Tensor w = Tensor::from({2}, {-1.0, 1.0}, true);
  mean(relu(w)).backward();
  EXPECT_EQ(w.grad()[0], 0.0);
  EXPECT_EQ(w.grad()[1], 0.5);
}

TEST(Autodiff, SecondBackwardAccumulates) {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  const Tensor loss = sum(w * w);
  loss.backward();
  loss.backward();
  EXPECT_EQ(w.grad()[0], 4.0);
  EXPECT_EQ(w.grad()[1], 8.0);
}

TEST(Autodiff, NonScalarLossRejected) {
  Tensor w = Tensor::from({2}, {1.0, 2.0}, true);
  EXPECT_THROW((w * w).backward(), ShapeError);
}

TEST(Autodiff, SharedSubexpressionMatchesUnrolledGraph) {
  Rng rng(8);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor x = random_tensor({5, 4}, rng, 1.0, false);
  // Shared: h used twice.
  const Tensor h = tanh(linear(x, w));
  sum(h * h + h).backward();
  const std::vector<double> shared(w.grad().begin(), w.grad().end());
  w.zero_grad();
  const Tensor h1 = tanh(linear(x, w));
  const Tensor h2 = tanh(linear(x, w));
  const Tensor h3 = tanh(linear(x, w));
  sum(h1 * h2 + h3).backward();
  for (std::size_t i = 0; i < shared.size(); ++i) EXPECT_NEAR(shared[i], w.grad()[i], 1e-12);
}

TEST(Autodiff, ThreeLayerNetMatchesFiniteDifferences) {
  Rng rng(21);
  const Tensor x = random_tensor({6, 5}, rng, 1.0, false);
  Tensor w1 = random_tensor({8, 5}, rng, 0.5);
  Tensor w2 = random_tensor({8, 8}, rng, 0.5);
  Tensor w3 = random_tensor({3, 8}, rng, 0.5);
  Tensor b1 = random_tensor({8}, rng, 0.1);
  auto fn = [&] { return mean(square(linear(tanh(linear(tanh(linear(x, w1, b1)), w2)), w3))); };
  const auto report = grad_check(fn, std::vector<Tensor>{w1, w2, w3, b1}, tolerance(1e-6));
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(GradCheck, ScalarSquare) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  const auto report = grad_check([&] { return sum(x * x); }, std::vector<Tensor>{x}, tolerance(1e-9));
  EXPECT_LT(report.max_rel_error, 1e-9);
  EXPECT_TRUE(report.passed);
}

TEST(GradCheck, FallbackStepsAvoidKinks) {
  // relu(x) at x = 1e-4: a 1e-3 step straddles the kink, 1e-6 does not.
  Tensor x = Tensor::from({1}, {1e-4}, true);
  GradCheckOptions options = tolerance(1e-6);
  options.step = 1e-3;
  EXPECT_FALSE(grad_check([&] { return sum(relu(x)); }, std::vector<Tensor>{x}, options).passed);
  options.fallback_steps = {1e-6};
  EXPECT_TRUE(grad_check([&] { return sum(relu(x)); }, std::vector<Tensor>{x}, options).passed);

  // A wrong gradient fails at every step.
  auto wrong = [&] {
    Tensor y = x * Tensor::scalar(2.0);
    return sum(y) + sum(x.detach());  // analytic 2, true slope 3
  };
  options.fallback_steps = {1e-4, 1e-5, 1e-6, 1e-7};
  EXPECT_FALSE(grad_check(wrong, std::vector<Tensor>{x}, options).passed);
  options.step = -1.0;
  EXPECT_THROW(grad_check(wrong, std::vector<Tensor>{x}, options), std::invalid_argument);
}

TEST(GradCheck, NonDeterministicFunctionRejected) {
  Tensor x = Tensor::from({1}, {3.0}, true);
  int calls = 0;
  auto fn = [&] { return sum(x * Tensor::scalar(static_cast<double>(++calls))); };
  EXPECT_THROW(grad_check(fn, std::vector<Tensor>{x}), std::runtime_error);
}

TEST(GradCheck, PrimitivesOnRandomShapes) {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + rng.uniform_int(2);
    const int c = 1 + rng.uniform_int(3);
    const int h = 2 * (1 + rng.uniform_int(3));
    const int w = 2 * (1 + rng.uniform_int(3));
    const Tensor proj = random_tensor({n, c, h, w}, rng, 1.0, false);
    Tensor x = random_tensor_off_zero({n, c, h, w}, rng);
    auto check = [&](const std::function<Tensor()>& fn, std::vector<Tensor> params) {
      const auto report = grad_check(fn, params, tolerance(1e-4));
      EXPECT_TRUE(report.passed) << report.max_rel_error;
    };
    check([&] { return sum(instance_norm(x) * proj); }, {x});
    check([&] { return sum(relu(x) * proj); }, {x});
    check([&] { return sum(nearest_upsample2d(avg_pool2d(x, 2), 2) * proj); }, {x});
    Tensor wconv = random_tensor({c, c, 3, 3}, rng, 0.3);
    Tensor bconv = random_tensor({c}, rng, 0.3);
    check([&] { return sum(conv2d(x, wconv, bconv) * proj); }, {x, wconv, bconv});
  }
}

TEST(Adam, StepDescends) {
  Tensor w = Tensor::from({1}, {1.0}, true);
  AdamState state = make_adam_state(std::vector<Tensor>{w}, {.lr = 0.1});
  sum(w * w).backward();
  std::vector<Tensor> params{w};
  adam_step(state, params);
  EXPECT_LT(w[0], 1.0);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, MissingGradRejected) {
  Tensor w = Tensor::from({1}, {1.0}, true);
  AdamState state = make_adam_state(std::vector<Tensor>{w}, {.lr = 0.1});
  std::vector<Tensor> params{w};
  EXPECT_THROW(adam_step(state, params), std::invalid_argument);
}

TEST(Adam, LearningRateConstants) {
  EXPECT_EQ(kDiscriminatorLr, 2e-4);
  EXPECT_EQ(kGeneratorLr, 5e-5);
  EXPECT_EQ(kDisentanglerLr, 3e-4);
}

TEST(ClipGradNorm, ScalesOnlyWhenAboveThreshold) {
  Tensor a = Tensor::from({2}, {0.0, 0.0}, true);
  auto ga = a.mutable_grad();
  ga[0] = 1.2;
  ga[1] = 1.6;  // norm 2
  std::vector<Tensor> params{a};
  EXPECT_NEAR(clip_grad_norm(params, 1.0), 2.0, 1e-15);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-15);
  ga[0] = 0.3;
  ga[1] = 0.4;  // norm 0.5
  clip_grad_norm(params, 1.0);
  EXPECT_EQ(a.grad()[0], 0.3);
  EXPECT_EQ(a.grad()[1], 0.4);
  EXPECT_EQ(kDefaultMaxGradNorm, 1.0);
}

double exact_spectral_norm(const Tensor& w) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(w.matrix(w.dim(0), static_cast<int>(w.numel()) / w.dim(0))));
  return svd.singularValues()[0];
}

TEST(SpectralNorm, IdentityIsUnchanged) {
  Rng rng(4);
  const Tensor w = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0}, true);
  SpectralState s = make_spectral_state("w", w, rng);
  const Tensor n = spectral_normalize(w, s);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(n[i], w[i], 1e-12);
}

TEST(SpectralNorm, ScaledIdentityConvergesToUnitNorm) {
  Rng rng(4);
  const Tensor w = Tensor::from({3, 3}, {3, 0, 0, 0, 3, 0, 0, 0, 3}, true);
  SpectralState s = make_spectral_state("w", w, rng);
  Tensor n;
  for (int i = 0; i < 5; ++i) n = spectral_normalize(w, s);
  EXPECT_NEAR(exact_spectral_norm(n), 1.0, 1e-3);
}

TEST(SpectralNorm, RankOneConvergesWithinTwentyIterations) {
  Rng rng(6);
  Eigen::VectorXd u = Eigen::VectorXd::Random(4).normalized();
  Eigen::VectorXd v = Eigen::VectorXd::Random(6).normalized();
  Eigen::MatrixXd m = 5.0 * u * v.transpose();
  std::vector<double> values(24);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) values[static_cast<std::size_t>(i * 6 + j)] = m(i, j);
  const Tensor w = Tensor::from({4, 6}, values, true);
  SpectralState s = make_spectral_state("w", w, rng);
  for (int i = 0; i < 20; ++i) power_iteration(s);
  EXPECT_NEAR(estimated_sigma(s), 5.0, 1e-3);
}

TEST(SpectralNorm, UnitNormMatrixIsFixedPoint) {
  Rng rng(12);
  Tensor w = Tensor::from({3, 4}, orthogonal_init(3, 4, rng), true);
  SpectralState s = make_spectral_state("w", w, rng);
  for (int i = 0; i < 30; ++i) power_iteration(s);
  const Tensor a = spectral_normalize(w, s);
  const Tensor b = spectral_normalize(w, s);
  for (std::size_t i = 0; i < a.numel(); ++i) {
    EXPECT_LT(std::abs(a[i] - w[i]), 1e-6);
    EXPECT_LT(std::abs(a[i] - b[i]), 1e-6);
  }
}

TEST(SpectralNorm, ZeroWeightIsClamped) {
  Rng rng(1);
  const Tensor w = Tensor::zeros({2, 3}, true);
  SpectralState s = make_spectral_state("zero", w, rng);
  const Tensor n = spectral_normalize(w, s);
  EXPECT_TRUE(s.warned);
  for (double v : n.data()) EXPECT_EQ(v, 0.0);
}

TEST(SpectralNorm, GradientMatchesFiniteDifferences) {
  Rng rng(31);
  Tensor w = random_tensor({3, 5}, rng);
  const Tensor proj = random_tensor({3, 5}, rng, 1.0, false);
  SpectralState s = make_spectral_state("w", w, rng);
  for (int i = 0; i < 3; ++i) power_iteration(s);
  const auto report = grad_check([&] { return sum(spectral_normalize(w, s, false) * proj); }, std::vector<Tensor>{w});
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}

TEST(Checkpoint, RoundTripIsLosslessAtFloatPrecision) {
  Rng rng(77);
  Checkpoint ckpt;
  std::vector<Tensor> tensors;
  for (int i = 0; i < 6; ++i) {
    Shape shape;
    const int rank = rng.uniform_int(4);
    for (int d = 0; d < rank; ++d) shape.push_back(1 + rng.uniform_int(5));
    tensors.push_back(random_tensor(shape, rng, 100.0, false));
    ckpt.put("t" + std::to_string(i), tensors.back());
  }
  ckpt.put_u64("seed", 0xDEADBEEFCAFEF00DULL);
  const Checkpoint back = Checkpoint::deserialize(ckpt.serialize());
  for (int i = 0; i < 6; ++i) {
    const auto name = "t" + std::to_string(i);
    EXPECT_EQ(back.shape(name), tensors[static_cast<std::size_t>(i)].shape());
    const auto values = back.values(name);
    for (std::size_t j = 0; j < values.size(); ++j) {
      EXPECT_EQ(values[j], static_cast<double>(static_cast<float>(tensors[static_cast<std::size_t>(i)][j])));
    }
  }
  EXPECT_EQ(back.get_u64("seed"), 0xDEADBEEFCAFEF00DULL);
}

TEST(Checkpoint, HeaderLayout) {
  Checkpoint ckpt;
  ckpt.put_scalar("a", 1.5);
  const auto bytes = ckpt.serialize();
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MNET");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 1);  // one record
  // name length 1, 'a', rank 0, then 1.5f
  EXPECT_EQ(bytes.size(), 4u + 2 + 4 + 4 + 1 + 4 + 4);
}

TEST(Checkpoint, BadMagicRejected) {
  std::vector<std::uint8_t> bytes{'N', 'O', 'P', 'E', 1, 0, 0, 0, 0, 0};
  EXPECT_THROW(Checkpoint::deserialize(bytes), std::runtime_error);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42);
  Rng b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c = Rng(42).split(1);
  Rng d = Rng(42).split(2);
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(OrthogonalInit, RowsOrColumnsAreOrthonormal) {
  Rng rng(3);
  const auto wide = orthogonal_init(3, 7, rng);
  Eigen::Map<const RowMatrix> w(wide.data(), 3, 7);
  EXPECT_LT((w * w.transpose() - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
  const auto tall = orthogonal_init(7, 3, rng);
  Eigen::Map<const RowMatrix> t(tall.data(), 7, 3);
  EXPECT_LT((t.transpose() * t - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
}

}  // namespace
}  // namespace mnet
