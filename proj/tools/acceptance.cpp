// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance            run everything
//   acceptance --only 3   run a single criterion

#include <CLI11.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "marionette/core/gradcheck.hpp"
#include "marionette/core/ops.hpp"
#include "marionette/eval/metrics.hpp"
#include "marionette/model/attention.hpp"
#include "marionette/model/losses.hpp"
#include "marionette/model/warp.hpp"
#include "marionette/synth/corpus.hpp"
#include "marionette/train/disentangler.hpp"
#include "marionette/train/gan.hpp"

namespace fs = std::filesystem;
using namespace mnet;
using geometry::Landmark68;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-4;
constexpr int kGradInstances = 10;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kReconstructionTol = 1e-12;
constexpr double kZeroMeanTol = 1e-9;
constexpr double kMaxPrincipalAngleDeg = 5.0;
constexpr double kOrthonormalityTol = 1e-8;
constexpr double kAlgebraicTol = 1e-12;
constexpr double kWeightSumTol = 1e-9;
constexpr double kInvarianceTol = 1e-10;
constexpr double kBruteForceTol = 1e-10;
constexpr double kIntegerShiftTol = 1e-14;
constexpr double kLinearityTol = 1e-12;
constexpr double kEncodingTol = 1e-12;
constexpr double kDisentanglerMaxMse = 0.5;
constexpr double kDisentanglerBudgetSeconds = 900.0;
constexpr double kGanBudgetSeconds = 1200.0;
constexpr double kMetricTol = 1e-12;
constexpr double kPrmseTol = 1e-9;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(shape, std::move(v), requires_grad);
}

// |x| >= margin, keeping relu/abs kinks outside the difference stencil.
Tensor off_zero(const Shape& shape, Rng& rng, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.normal();
    if (std::abs(x) < margin) x = x < 0 ? -margin - std::abs(x) : margin + x;
  }
  return Tensor::from(shape, std::move(v), true);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ------------------------------------------------------------- 1. gradients

struct GradFamily {
  std::string name;
  int instances = 0;
  double worst = 0;
  bool pass = true;
};

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradCheckOptions strict;
  strict.tolerance = kGradTolerance;
  GradCheckOptions deep = strict;
  deep.fallback_steps = {1e-7, 1e-6};

  std::vector<GradFamily> families;

  auto check = [&](GradFamily& fam, const std::function<Tensor()>& fn, const std::vector<NamedTensor>& params,
                   const GradCheckOptions& o) {
    const auto r = grad_check(fn, params, o);
    fam.worst = std::max(fam.worst, r.max_rel_error);
    fam.pass = fam.pass && r.passed;
    ++fam.instances;
  };
  auto family = [&](const std::string& name, std::uint64_t seed, const GradCheckOptions& o,
                    const std::function<void(Rng&, GradFamily&, const GradCheckOptions&)>& one) {
    GradFamily fam{name};
    Rng rng(seed);
    for (int i = 0; i < kGradInstances; ++i) one(rng, fam, o);
    families.push_back(fam);
  };
  auto dims = [](Rng& rng, int lo, int hi) { return lo + rng.uniform_int(hi - lo + 1); };

  // Elementwise and reduction primitives on [n, c, h, w].
  auto image_shape = [&](Rng& rng) -> Shape { return {dims(rng, 1, 2), dims(rng, 1, 3), 2 * dims(rng, 1, 3), 2 * dims(rng, 1, 3)}; };
  auto unary = [&](const std::string& name, std::uint64_t seed, bool kinked, std::function<Tensor(const Tensor&)> op) {
    family(name, seed, strict, [&, kinked, op](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
      const Shape s = image_shape(rng);
      Tensor x = kinked ? off_zero(s, rng) : random_tensor(s, rng);
      const Tensor probe = op(x.detach());
      const Tensor proj = random_tensor(probe.shape(), rng, 1.0, false);
      check(fam, [&] { return sum(op(x) * proj); }, {{"x", x}}, o);
    });
  };
  unary("relu", 101, true, [](const Tensor& x) { return relu(x); });
  unary("tanh", 102, false, [](const Tensor& x) { return tanh(x); });
  unary("abs", 103, true, [](const Tensor& x) { return abs(x); });
  unary("square", 104, false, [](const Tensor& x) { return square(x); });
  unary("scale", 105, false, [](const Tensor& x) { return scale(x, -1.7); });
  unary("add_scalar", 106, false, [](const Tensor& x) { return add_scalar(x, 0.3); });
  unary("softmax_lastdim", 107, false, [](const Tensor& x) { return softmax_lastdim(x); });
  unary("instance_norm", 108, false, [](const Tensor& x) { return instance_norm(x); });
  unary("avg_pool2d", 109, false, [](const Tensor& x) { return avg_pool2d(x, 2); });
  unary("nearest_upsample2d", 110, false, [](const Tensor& x) { return nearest_upsample2d(x, 2); });
  unary("mean_over_axis", 111, false, [](const Tensor& x) { return mean_over_axis(x, 1); });
  unary("mean", 112, false, [](const Tensor& x) { return mean(x); });
  unary("sum", 113, false, [](const Tensor& x) { return sum(x); });
  unary("permute", 114, false, [](const Tensor& x) { return permute(x, {0, 2, 3, 1}); });
  unary("reshape", 115, false, [](const Tensor& x) {
    return reshape(x, {x.dim(0) * x.dim(1), x.dim(2) * x.dim(3)});
  });

  auto binary = [&](const std::string& name, std::uint64_t seed, std::function<Tensor(const Tensor&, const Tensor&)> op,
                    bool broadcast) {
    family(name, seed, strict, [&, op, broadcast](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
      const Shape s = image_shape(rng);
      Tensor a = random_tensor(s, rng);
      Tensor b = random_tensor(broadcast ? Shape{s[1], 1, 1} : s, rng);
      const Tensor proj = random_tensor(s, rng, 1.0, false);
      check(fam, [&] { return sum(op(a, b) * proj); }, {{"a", a}, {"b", b}}, o);
    });
  };
  binary("add", 121, [](const Tensor& a, const Tensor& b) { return add(a, b); }, false);
  binary("add (broadcast)", 122, [](const Tensor& a, const Tensor& b) { return add(a, b); }, true);
  binary("sub", 123, [](const Tensor& a, const Tensor& b) { return sub(a, b); }, false);
  binary("mul", 124, [](const Tensor& a, const Tensor& b) { return mul(a, b); }, false);
  binary("mul (broadcast)", 125, [](const Tensor& a, const Tensor& b) { return mul(a, b); }, true);

  family("matmul", 131, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const int m = dims(rng, 1, 4), k = dims(rng, 1, 4), n = dims(rng, 1, 4);
    const bool tb = rng.uniform() < 0.5;
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor(tb ? Shape{n, k} : Shape{k, n}, rng);
    const Tensor proj = random_tensor({m, n}, rng, 1.0, false);
    check(fam, [&] { return sum(matmul(a, b, tb) * proj); }, {{"a", a}, {"b", b}}, o);
  });
  family("linear", 132, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const int n = dims(rng, 1, 4), in = dims(rng, 1, 5), out = dims(rng, 1, 5);
    Tensor x = random_tensor({n, in}, rng);
    Tensor w = random_tensor({out, in}, rng);
    Tensor bias = random_tensor({out}, rng);
    const Tensor proj = random_tensor({n, out}, rng, 1.0, false);
    check(fam, [&] { return sum(linear(x, w, bias) * proj); }, {{"x", x}, {"w", w}, {"b", bias}}, o);
  });
  family("conv2d", 133, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const Shape s = image_shape(rng);
    const int stride = 1 + rng.uniform_int(2);
    const int out = dims(rng, 1, 3);
    Tensor x = random_tensor(s, rng);
    Tensor w = random_tensor({out, s[1], 3, 3}, rng, 0.3);
    Tensor bias = random_tensor({out}, rng, 0.3);
    const Tensor proj = random_tensor(conv2d(x.detach(), w.detach(), bias.detach(), stride).shape(), rng, 1.0, false);
    check(fam, [&] { return sum(conv2d(x, w, bias, stride) * proj); }, {{"x", x}, {"w", w}, {"b", bias}}, o);
  });
  family("conv1x1", 134, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const Shape s = image_shape(rng);
    const int out = dims(rng, 1, 3);
    Tensor x = random_tensor(s, rng);
    Tensor w = random_tensor({out, s[1], 1, 1}, rng);
    Tensor bias = random_tensor({out}, rng);
    const Tensor proj = random_tensor({s[0], out, s[2], s[3]}, rng, 1.0, false);
    check(fam, [&] { return sum(conv1x1(x, w, bias) * proj); }, {{"x", x}, {"w", w}, {"b", bias}}, o);
  });
  family("concat_channels", 135, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const Shape s = image_shape(rng);
    Tensor a = random_tensor(s, rng);
    Tensor b = random_tensor({s[0], dims(rng, 1, 3), s[2], s[3]}, rng);
    const Tensor proj = random_tensor({s[0], s[1] + b.dim(1), s[2], s[3]}, rng, 1.0, false);
    check(fam, [&] { return sum(concat_channels({a, b}) * proj); }, {{"a", a}, {"b", b}}, o);
  });
  family("embedding", 136, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const int rows = dims(rng, 2, 5), dim = dims(rng, 1, 4);
    Tensor table = random_tensor({rows, dim}, rng);
    std::vector<int> ids(3);
    for (int& id : ids) id = rng.uniform_int(rows);
    const Tensor proj = random_tensor({3, dim}, rng, 1.0, false);
    check(fam, [&] { return sum(embedding(table, ids) * proj); }, {{"table", table}}, o);
  });
  family("spectral_normalize", 137, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    Tensor w = random_tensor({dims(rng, 2, 4), dims(rng, 2, 5)}, rng);
    const Tensor proj = random_tensor(w.shape(), rng, 1.0, false);
    SpectralState s = make_spectral_state("w", w, rng);
    for (int i = 0; i < 3; ++i) power_iteration(s);
    check(fam, [&] { return sum(spectral_normalize(w, s, false) * proj); }, {{"w", w}}, o);
  });

  // Attention block, blender, warp, warp alignment.
  family("attention_block", 141, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    ParameterStore store;
    const int cx = 4 * dims(rng, 1, 2), cy = 4 * dims(rng, 1, 2), k = dims(rng, 1, 3);
    AttentionParams p(store, "attn", cx, cy, rng);
    Tensor zx = random_tensor({1, cx, dims(rng, 1, 3), dims(rng, 1, 3)}, rng);
    Tensor zy = random_tensor({1, k, cy, dims(rng, 1, 2), dims(rng, 1, 2)}, rng);
    const Tensor proj = random_tensor(zx.shape(), rng, 1.0, false);
    auto params = store.named();
    params.push_back({"zx", zx});
    params.push_back({"zy", zy});
    check(fam, [&] { return sum(attention_block(zx, zy, p) * proj); }, params, o);
  });
  family("bilinear_warp", 142, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const int n = dims(rng, 1, 2), c = dims(rng, 1, 3), h = dims(rng, 2, 5), w = dims(rng, 2, 5);
    Tensor s = random_tensor({n, c, h, w}, rng);
    // Sample positions strictly between grid points.
    std::vector<double> fv(static_cast<std::size_t>(n) * 2 * h * w);
    for (std::size_t i = 0; i < fv.size(); ++i) {
      const bool horizontal = (i / (static_cast<std::size_t>(h) * w)) % 2 == 0;
      const double half = 0.5 * ((horizontal ? w : h) - 1);
      fv[i] = (std::floor(rng.uniform(-2.0, 2.0)) + rng.uniform(0.2, 0.8)) / half;
    }
    Tensor f = Tensor::from({n, 2, h, w}, std::move(fv), true);
    const Tensor proj = random_tensor({n, c, h, w}, rng, 1.0, false);
    check(fam, [&] { return sum(bilinear_warp(s, f) * proj); }, {{"features", s}, {"flow", f}}, o);
  });
  family("warp_align_block", 143, deep, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    ParameterStore store;
    const int cu = dims(rng, 1, 4), cs = dims(rng, 1, 3), h = 2 * dims(rng, 1, 3), w = 2 * dims(rng, 1, 3);
    WarpAlignBlock block(store, "wa", cu, rng);
    Tensor u = random_tensor({1, cu, h, w}, rng, 0.3);
    Tensor s = random_tensor({1, cs, h, w}, rng);
    const Tensor proj = random_tensor({1, cu + cs, h, w}, rng, 1.0, false);
    auto params = store.named();
    params.push_back({"u", u});
    params.push_back({"s", s});
    check(fam, [&] { return sum(block(u, s) * proj); }, params, o);
  });

  // Losses.
  auto scores = [&](const Shape& shape, Rng& rng) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
      x = 2.0 * rng.normal();
      for (double kink : {-1.0, 1.0}) {
        if (std::abs(x - kink) < 0.05) x = kink + (x < kink ? -0.05 : 0.05);
      }
    }
    return Tensor::from(shape, std::move(v), true);
  };
  family("hinge_d_loss", 151, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const Shape s = {dims(rng, 1, 2), 1, dims(rng, 1, 3), dims(rng, 1, 3)};
    Tensor real = scores(s, rng), fake = scores(s, rng);
    check(fam, [&] { return hinge_d_loss(real, fake); }, {{"real", real}, {"fake", fake}}, o);
  });
  family("hinge_g_loss", 152, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    Tensor fake = scores({dims(rng, 1, 2), 1, dims(rng, 1, 3), dims(rng, 1, 3)}, rng);
    check(fam, [&] { return hinge_g_loss(fake); }, {{"fake", fake}}, o);
  });
  family("feature_matching_loss", 153, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const std::vector<Tensor> real = {random_tensor({1, 2, 4, 4}, rng, 1.0, false), random_tensor({1, 3, 2, 2}, rng, 1.0, false)};
    Tensor f0 = (real[0] + off_zero({1, 2, 4, 4}, rng)).detach();
    Tensor f1 = (real[1] + off_zero({1, 3, 2, 2}, rng)).detach();
    f0.set_requires_grad(true);
    f1.set_requires_grad(true);
    check(
        fam,
        [&] {
          const std::vector<Tensor> fake = {f0, f1};
          return feature_matching_loss(real, fake);
        },
        {{"fake0", f0}, {"fake1", f1}}, o);
  });
  const FeatureNet net(11, {4, 6, 6, 6, 6});
  family("perceptual_loss", 154, deep, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    const Tensor x = random_tensor({1, 3, 16, 16}, rng, 0.5, false);
    Tensor y = random_tensor({1, 3, 16, 16}, rng, 0.5);
    std::vector<double> m(256);
    for (double& v : m) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Tensor mask = Tensor::from({1, 1, 16, 16}, m);
    check(fam, [&] { return perceptual_loss(x, y, mask, net); }, {{"x_hat", y}}, o);
  });
  family("generator_total_loss", 155, strict, [&](Rng& rng, GradFamily& fam, const GradCheckOptions& o) {
    Tensor a = random_tensor({1}, rng), b = random_tensor({1}, rng), c = random_tensor({1}, rng), d = random_tensor({1}, rng);
    check(fam, [&] { return generator_total_loss({sum(a), sum(square(b)), sum(square(c)), sum(square(d))}); },
          {{"adv", a}, {"p", b}, {"pf", c}, {"fm", d}}, o);
  });

  const double elapsed = seconds_since(t0);
  bool pass = elapsed < kGradBudgetSeconds;
  double worst = 0;
  std::string failed;
  for (const auto& f : families) {
    pass = pass && f.pass && f.instances >= kGradInstances;
    worst = std::max(worst, f.worst);
    if (!f.pass) failed += " " + f.name;
  }
  std::string detail = fmt("%zu families x %d instances, max rel err %.2e (< %.0e), %.1f s (< %.0f s)", families.size(),
                           kGradInstances, worst, kGradTolerance, elapsed, kGradBudgetSeconds);
  if (!failed.empty()) detail += "; failed:" + failed;
  return {pass, detail};
}

// ------------------------------------------------------- 2-4. landmark geometry

double max_abs(const Landmark68& l) { return l.cwiseAbs().maxCoeff(); }

synth::Corpus fifty_identity_corpus() {
  synth::SynthConfig c;
  c.identities = 50;
  c.clips_per_identity = 1;
  c.frames_per_clip = 20;
  c.seed = 5;
  return synth::generate_corpus(c);
}

Outcome decomposition() {
  const auto corpus = fifty_identity_corpus();
  const auto fit = geometry::fit_basis_from_videos(corpus.landmark_videos());
  const auto& stats = fit.stats;
  double recon = 0, zero_mean = 0;
  for (std::size_t c = 0; c < fit.normalized.size(); ++c) {
    Landmark68 acc = Landmark68::Zero();
    for (std::size_t t = 0; t < fit.normalized[c].size(); ++t) {
      const auto& e = stats.expression_offsets[c][t];
      acc += e;
      recon = std::max(recon, max_abs(stats.mean_geometry + stats.identity_geometry[c] + e - fit.normalized[c][t]));
    }
    zero_mean = std::max(zero_mean, max_abs(acc / static_cast<double>(fit.normalized[c].size())));
  }
  return {recon <= kReconstructionTol && zero_mean <= kZeroMeanTol && fit.normalized.size() == 50,
          fmt("50 identities, reconstruction %.1e (<= %.0e), per-video mean expression %.1e (<= %.0e)", recon,
              kReconstructionTol, zero_mean, kZeroMeanTol)};
}

double max_principal_angle_deg(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.transpose() * b);
  return std::acos(std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

Outcome pca_oracle() {
  synth::SynthConfig c;
  c.identities = 200;
  c.clips_per_identity = 1;
  c.frames_per_clip = 50;
  c.seed = 7;
  const auto corpus = synth::generate_corpus(c);
  const auto fit = geometry::fit_basis_from_videos(corpus.landmark_videos());
  // Carry the generating modes into the fitted template's frame.
  const auto frame = geometry::fit_similarity(corpus.templ, fit.template_landmark);
  double worst_angle = 0, worst_ortho = 0;
  std::string dims;
  bool dims_ok = true;
  int total = 0;
  for (int g = 0; g < geometry::kNumExpressionGroups; ++g) {
    Eigen::MatrixXd truth = corpus.modes.modes[static_cast<std::size_t>(g)];
    for (Eigen::Index i = 0; i < truth.rows(); i += 3) truth.middleRows(i, 3) = frame.rotation * truth.middleRows(i, 3);
    const auto& b = fit.basis.groups[static_cast<std::size_t>(g)].basis;
    worst_angle = std::max(worst_angle, max_principal_angle_deg(truth, b));
    worst_ortho = std::max(worst_ortho, (b.transpose() * b - Eigen::MatrixXd::Identity(b.cols(), b.cols())).cwiseAbs().maxCoeff());
    dims += (g ? "," : "") + std::to_string(b.cols());
    dims_ok = dims_ok && b.cols() == geometry::kGroupComponents[static_cast<std::size_t>(g)];
    total += static_cast<int>(b.cols());
  }
  return {worst_angle < kMaxPrincipalAngleDeg && worst_ortho <= kOrthonormalityTol && dims_ok && total == 48,
          fmt("max principal angle %.3f deg (< %.0f), orthonormality %.1e (<= %.0e), dims [%s] = %d", worst_angle,
              kMaxPrincipalAngleDeg, worst_ortho, kOrthonormalityTol, dims.c_str(), total)};
}

Outcome landmark_round_trip() {
  const auto corpus = fifty_identity_corpus();
  const auto fit = geometry::fit_basis_from_videos(corpus.landmark_videos());
  const auto& basis = fit.basis;
  double excess = 0, worst_residual = 0, algebraic = 0;
  Rng rng(44);
  for (std::size_t c = 0; c < fit.normalized.size(); ++c) {
    const std::vector<Landmark68> id = {fit.stats.identity_geometry[c]};
    for (std::size_t t = 0; t < fit.normalized[c].size(); ++t) {
      const Landmark68& l = fit.normalized[c][t];
      const Landmark68& e = fit.stats.expression_offsets[c][t];
      const Landmark68 e_hat = geometry::reconstruct_expression(geometry::project_expression(e, basis), basis, 1.0);
      const Landmark68 out = geometry::transform_landmark<double>(id, e_hat, basis.mean_landmark);
      const double residual = (e - e_hat).norm();
      worst_residual = std::max(worst_residual, residual);
      excess = std::max(excess, (out - l).norm() - residual);

      geometry::ExpressionCoeffs<double> alpha;
      for (int i = 0; i < geometry::kExpressionDim; ++i) alpha[i] = 3.0 * rng.normal();
      const auto parts = geometry::split_landmark(l, alpha, basis, 1.0 + rng.uniform());
      algebraic = std::max(algebraic, max_abs(basis.mean_landmark + parts.identity + parts.expression - l));
    }
  }
  return {excess <= kAlgebraicTol && algebraic <= kAlgebraicTol,
          fmt("round-trip error exceeds truncation residual by %.1e (<= %.0e; largest residual %.2e), identity %.1e (<= %.0e)",
              std::max(excess, 0.0), kAlgebraicTol, worst_residual, algebraic, kAlgebraicTol)};
}

// ------------------------------------------------------------ 5. attention

Eigen::MatrixXd as_matrix(const Tensor& t) {
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(t.data().data(), t.dim(0),
                                                                                                  t.dim(1));
}

// Dense evaluation of softmax(Q K^T / sqrt(c_a)) V for sample n: [hx*wx, cx].
Eigen::MatrixXd dense_attention(const Tensor& zx, const Tensor& zy, const AttentionParams& p, int n) {
  const int cx = zx.dim(1), hx = zx.dim(2), wx = zx.dim(3);
  const int k = zy.dim(1), cy = zy.dim(2), hy = zy.dim(3), wy = zy.dim(4);
  const Tensor px = positional_encoding(hx, wx, cx);
  const Tensor py = positional_encoding(hy, wy, cy);
  const Eigen::MatrixXd wq = as_matrix(p.w_q.effective_weight()), wqp = as_matrix(p.w_qp.effective_weight());
  const Eigen::MatrixXd wk = as_matrix(p.w_k.effective_weight()), wkp = as_matrix(p.w_kp.effective_weight());
  const Eigen::MatrixXd wv = as_matrix(p.w_v.effective_weight());
  Eigen::MatrixXd q(hx * wx, p.attention_channels), key(k * hy * wy, p.attention_channels), val(k * hy * wy, cx);
  for (int i = 0; i < hx * wx; ++i) {
    Eigen::VectorXd z(cx), pe(cx);
    for (int c = 0; c < cx; ++c) {
      z[c] = zx.data()[(static_cast<std::size_t>(n) * cx + c) * hx * wx + i];
      pe[c] = px.data()[static_cast<std::size_t>(c) * hx * wx + i];
    }
    q.row(i) = (wq * z + wqp * pe).transpose();
  }
  for (int t = 0; t < k; ++t) {
    for (int i = 0; i < hy * wy; ++i) {
      Eigen::VectorXd z(cy), pe(cy);
      for (int c = 0; c < cy; ++c) {
        z[c] = zy.data()[((static_cast<std::size_t>(n) * k + t) * cy + c) * hy * wy + i];
        pe[c] = py.data()[static_cast<std::size_t>(c) * hy * wy + i];
      }
      key.row(t * hy * wy + i) = (wk * z + wkp * pe).transpose();
      val.row(t * hy * wy + i) = (wv * z).transpose();
    }
  }
  Eigen::MatrixXd s = q * key.transpose() / std::sqrt(static_cast<double>(p.attention_channels));
  for (int r = 0; r < s.rows(); ++r) {
    s.row(r) = (s.row(r).array() - s.row(r).maxCoeff()).exp();
    s.row(r) /= s.row(r).sum();
  }
  return s * val;
}

Tensor stack_targets(const std::vector<Tensor>& parts) {
  std::vector<double> v;
  for (const auto& p : parts) v.insert(v.end(), p.data().begin(), p.data().end());
  const Shape& s = parts[0].shape();
  return Tensor::from({1, static_cast<int>(parts.size()), s[2], s[3], s[4]}, v);
}

Outcome attention_invariants() {
  Rng rng(55);
  double sum_err = 0, brute = 0, perm = 0, dup = 0;
  for (int trial = 0; trial < 10; ++trial) {
    ParameterStore store;
    AttentionParams p(store, "attn", 4, 8, rng);
    const Tensor zx = random_tensor({2, 4, 2, 3}, rng, 1.0, false);
    const Tensor zy = random_tensor({2, 1 + trial % 3, 8, 2, 2}, rng, 1.0, false);
    const Tensor w = attention_weights(zx, zy, p);
    const int keys = w.dim(2);
    for (int r = 0; r < w.dim(0) * w.dim(1); ++r) {
      double s = 0;
      for (int key = 0; key < keys; ++key) s += w.data()[static_cast<std::size_t>(r) * keys + key];
      sum_err = std::max(sum_err, std::abs(s - 1.0));
    }
    const Tensor out = image_attention(zx, zy, p);
    for (int n = 0; n < 2; ++n) {
      const Eigen::MatrixXd d = dense_attention(zx, zy, p, n);
      for (int r = 0; r < 6; ++r)
        for (int c = 0; c < 4; ++c)
          brute = std::max(brute, std::abs(out.data()[(static_cast<std::size_t>(n) * 4 + c) * 6 + r] - d(r, c)));
    }

    ParameterStore bstore;
    Blender blender(bstore, "blender", 8, 8, rng);
    const Tensor bx = random_tensor({1, 8, 2, 2}, rng, 1.0, false);
    const Tensor a = random_tensor({1, 1, 8, 2, 2}, rng, 1.0, false);
    const Tensor b = random_tensor({1, 1, 8, 2, 2}, rng, 1.0, false);
    const Tensor c = random_tensor({1, 1, 8, 2, 2}, rng, 1.0, false);
    perm = std::max(perm, max_abs_diff(blender(bx, stack_targets({a, b, c})), blender(bx, stack_targets({c, a, b}))));
    dup = std::max(dup, max_abs_diff(blender(bx, stack_targets({a, b})), blender(bx, stack_targets({a, a, b, b}))));
  }
  return {sum_err <= kWeightSumTol && perm <= kInvarianceTol && dup <= kInvarianceTol && brute <= kBruteForceTol,
          fmt("weight sums %.1e (<= %.0e), permutation %.1e, duplication %.1e (<= %.0e), brute force %.1e (<= %.0e)", sum_err,
              kWeightSumTol, perm, dup, kInvarianceTol, brute, kBruteForceTol)};
}

// ------------------------------------------------------------------ 6. warp

Tensor constant_flow(int n, int h, int w, double fx, double fy) {
  std::vector<double> v;
  for (int b = 0; b < n; ++b) {
    v.insert(v.end(), static_cast<std::size_t>(h) * w, fx);
    v.insert(v.end(), static_cast<std::size_t>(h) * w, fy);
  }
  return Tensor::from({n, 2, h, w}, std::move(v));
}

Outcome warp_invariants() {
  Rng rng(66);
  bool zero_exact = true;
  double shift = 0, linear = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + trial % 2, c = 1 + trial % 3, h = 3 + trial % 4, w = 4 + trial % 3;
    const Tensor s = random_tensor({n, c, h, w}, rng, 1.0, false);
    const Tensor same = bilinear_warp(s, Tensor::zeros({n, 2, h, w}));
    zero_exact = zero_exact && std::equal(same.data().begin(), same.data().end(), s.data().begin());

    // Integer shifts: output (y, x) reads input (y + dy, x + dx), zero outside.
    const int dx = trial % 3 - 1, dy = (trial / 3) % 3 - 1;
    const Tensor moved = bilinear_warp(s, constant_flow(n, h, w, 2.0 * dx / (w - 1), 2.0 * dy / (h - 1)));
    for (int b = 0; b < n * c; ++b)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy, sx = x + dx;
          const bool inside = sy >= 0 && sy < h && sx >= 0 && sx < w;
          const double expected = inside ? s.data()[(static_cast<std::size_t>(b) * h + sy) * w + sx] : 0.0;
          shift = std::max(shift, std::abs(moved.data()[(static_cast<std::size_t>(b) * h + y) * w + x] - expected));
        }

    const Tensor a = random_tensor({n, c, h, w}, rng, 1.0, false);
    const Tensor f = random_tensor({n, 2, h, w}, rng, 0.7, false);
    const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
    linear = std::max(linear, max_abs_diff(bilinear_warp(alpha * s + beta * a, f),
                                           alpha * bilinear_warp(s, f) + beta * bilinear_warp(a, f)));
  }
  return {zero_exact && shift <= kIntegerShiftTol && linear <= kLinearityTol,
          fmt("zero flow %s, integer shift %.1e (<= %.0e), linearity %.1e (<= %.0e)", zero_exact ? "bit-exact" : "NOT exact",
              shift, kIntegerShiftTol, linear, kLinearityTol)};
}

// ------------------------------------------------------ 7. positional encoding

Outcome encoding_formula() {
  double worst = 0;
  for (const auto& [h, w, c] : {std::tuple{8, 8, 8}, std::tuple{32, 32, 16}}) {
    const Tensor p = positional_encoding(h, w, c);
    for (int k = 0; k < c / 4; ++k) {
      const double denom = std::pow(10000.0, 2.0 * k / c);
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
          const double ai = 256.0 * i / (h * denom), aj = 256.0 * j / (w * denom);
          const double expected[4] = {std::sin(ai), std::cos(ai), std::sin(aj), std::cos(aj)};
          for (int q = 0; q < 4; ++q) {
            const double got = p.data()[(static_cast<std::size_t>(4 * k + q) * h + i) * w + j];
            worst = std::max(worst, std::abs(got - expected[q]));
          }
        }
    }
  }
  return {worst <= kEncodingTol, fmt("(8,8,8) and (32,32,16): max deviation %.1e (<= %.0e)", worst, kEncodingTol)};
}

// ------------------------------------------------------------ 8. disentangler

std::vector<int> clips_of(const synth::Corpus& corpus, const std::vector<int>& ids) {
  std::vector<int> out;
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    if (std::binary_search(ids.begin(), ids.end(), corpus.clips[c].identity)) out.push_back(static_cast<int>(c));
  }
  return out;
}

Outcome disentangler_learning() {
  const auto t0 = Clock::now();
  synth::SynthConfig sc;
  sc.identities = 200;
  sc.clips_per_identity = 1;
  sc.frames_per_clip = 50;
  sc.seed = 7;
  const auto corpus = synth::generate_corpus(sc);
  const auto split = synth::corpus_split(corpus, 0.8, 7);
  const auto train_clips = clips_of(corpus, split.train);
  std::vector<std::vector<Landmark68>> videos;
  for (int c : train_clips) videos.push_back(corpus.clips[static_cast<std::size_t>(c)].landmarks);
  const auto basis = geometry::fit_basis_from_videos(videos).basis;
  const auto train_ex = train::make_disentangler_examples(corpus, train_clips, basis);
  const auto held_ex = train::make_disentangler_examples(corpus, clips_of(corpus, split.held_out), basis);
  train::TrainConfig tc;
  tc.seed = 7;
  Rng rng(tc.seed);
  train::Disentangler model(32, tc.disentangler_hidden, rng);
  const auto report = train::train_disentangler(model, corpus, train_ex, held_ex, basis, tc);
  const double elapsed = seconds_since(t0);
  return {report.held_out_mse <= kDisentanglerMaxMse && elapsed <= kDisentanglerBudgetSeconds,
          fmt("%d steps, lr %.0e, clip %.0f: held-out MSE %.4f (<= %.1f), zero predictor %.4f, %.1f s (<= %.0f s)",
              tc.disentangler_steps, tc.disentangler_lr, tc.grad_clip, report.held_out_mse, kDisentanglerMaxMse,
              report.zero_baseline, elapsed, kDisentanglerBudgetSeconds)};
}

// -------------------------------------------------------------- 9. GAN smoke

Outcome gan_smoke() {
  const auto t0 = Clock::now();
  synth::SynthConfig sc;
  sc.identities = 10;
  const auto corpus = synth::generate_corpus(sc);
  train::TrainConfig tc;
  tc.targets = 2;
  tc.batch_size = 2;
  tc.image_size = 32;
  tc.base_channels = 16;
  tc.max_channels = 128;
  std::vector<int> clips(corpus.clips.size());
  for (std::size_t i = 0; i < clips.size(); ++i) clips[i] = static_cast<int>(i);

  train::GanTrainer trainer(tc, corpus, clips);
  const auto probe = trainer.sample(999999, 8);
  const double l1_start = trainer.mean_l1(probe);
  bool finite = true;
  for (int i = 0; i < 500; ++i) finite = trainer.step().finite() && finite;
  const double l1_end = trainer.mean_l1(probe);
  const double train_seconds = seconds_since(t0);

  const auto bytes = trainer.checkpoint().serialize();
  std::vector<train::StepLosses> continued;
  for (int i = 0; i < 10; ++i) continued.push_back(trainer.step());
  train::GanTrainer resumed(tc, corpus, clips);
  resumed.restore(Checkpoint::deserialize(bytes));
  bool same = true;
  for (int i = 0; i < 10; ++i) same = same && resumed.step() == continued[static_cast<std::size_t>(i)];
  same = same && resumed.checkpoint().serialize() == trainer.checkpoint().serialize();
  for (const auto& s : continued) finite = finite && s.finite();

  const double elapsed = seconds_since(t0);
  return {finite && l1_end < l1_start && same && elapsed <= kGanBudgetSeconds,
          fmt("500 steps at 32 px, K=2, batch 2, base %d/max %d: losses %s, L1 %.4f -> %.4f, 10-step resume %s, %.0f s "
              "(training %.0f s; <= %.0f s)",
              tc.base_channels, tc.max_channels, finite ? "finite" : "NON-FINITE", l1_start, l1_end,
              same ? "bit-identical" : "DIFFERS", elapsed, train_seconds, kGanBudgetSeconds)};
}

// --------------------------------------------------------------- 10. metrics

Landmark68 posed(const Landmark68& templ, double yaw, double pitch, double roll, double scale) {
  geometry::SimilarityTransform<double> t;
  t.scale = scale;
  t.rotation = geometry::angles_to_rotation<double>(yaw, pitch, roll);
  t.translation = Eigen::Vector3d(32, 32, 0);
  return geometry::apply(t, templ);
}

double window_ssim(const Image& a, const Image& b, int c, int top, int left) {
  const auto w = eval::ssim_window();
  double mu_a = 0, mu_b = 0;
  for (int u = 0; u < 11; ++u)
    for (int v = 0; v < 11; ++v) {
      mu_a += w[static_cast<std::size_t>(u * 11 + v)] * a.at(c, top + u, left + v);
      mu_b += w[static_cast<std::size_t>(u * 11 + v)] * b.at(c, top + u, left + v);
    }
  double va = 0, vb = 0, cov = 0;
  for (int u = 0; u < 11; ++u)
    for (int v = 0; v < 11; ++v) {
      const double wt = w[static_cast<std::size_t>(u * 11 + v)];
      const double da = a.at(c, top + u, left + v) - mu_a, db = b.at(c, top + u, left + v) - mu_b;
      va += wt * da * da;
      vb += wt * db * db;
      cov += wt * da * db;
    }
  return (2 * mu_a * mu_b + eval::kSsimC1) * (2 * cov + eval::kSsimC2) /
         ((mu_a * mu_a + mu_b * mu_b + eval::kSsimC1) * (va + vb + eval::kSsimC2));
}

Outcome metrics() {
  Rng rng(77);
  Image x(3, 32, 32), y(3, 32, 32);
  for (double& v : x.data) v = rng.uniform();
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = 0.7 * x.data[i] + 0.3 * rng.uniform();
  const bool ssim_one = eval::ssim(x, x) == 1.0;
  const bool cap = eval::psnr(x, x) == eval::kPsnrCap && eval::psnr_from_mse(0.99e-10) == eval::kPsnrCap &&
                   std::abs(eval::psnr(Image(3, 32, 32, 0.0), Image(3, 32, 32, 0.5)) - 10.0 * std::log10(4.0)) <= kMetricTol;

  const Landmark68 templ = synth::canonical_template();
  std::vector<Landmark68> driver, generated;
  for (int i = 0; i < 6; ++i) {
    driver.push_back(posed(templ, -20.0 + 7.0 * i, 3.0 * i - 5.0, 2.0 - i, 40.0));
    generated.push_back(posed(templ, -15.0 + 7.0 * i, 3.0 * i - 5.0, 2.0 - i, 25.0));
  }
  const double prmse = eval::prmse(driver, generated, templ);

  // Left-half mask: enumerate masked pixels and windows centred in the mask.
  Image mask(1, 32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 16; ++c) mask.at(0, r, c) = 1.0;
  double sq = 0;
  int count = 0;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 32; ++r)
      for (int col = 0; col < 16; ++col, ++count) sq += std::pow(x.at(c, r, col) - y.at(c, r, col), 2);
  double ws = 0;
  int windows = 0;
  for (int top = 0; top + 11 <= 32; ++top)
    for (int left = 0; left + 5 < 16; ++left, ++windows)
      for (int c = 0; c < 3; ++c) ws += window_ssim(x, y, c, top, left) / 3.0;
  const auto m = eval::masked_metrics(x, y, mask);
  const double masked_err = std::max(std::abs(m.psnr - 10.0 * std::log10(count / sq)), std::abs(m.ssim - ws / windows));

  return {ssim_one && cap && std::abs(prmse - 5.0) <= kPrmseTol && masked_err <= kMetricTol,
          fmt("ssim(x,x) %s, psnr cap %s, PRMSE 5 deg case %.12f (+-%.0e), masked oracle %.1e (<= %.0e)",
              ssim_one ? "== 1" : "!= 1", cap ? "ok" : "WRONG", prmse, kPrmseTol, masked_err, kMetricTol)};
}

// ------------------------------------------------------ 11. CLI determinism

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome cli_determinism(const std::string& cli) {
  const auto t0 = Clock::now();
  const fs::path root = fs::temp_directory_path() / "mnet_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  std::ofstream(root / "gan.cfg") << "base_channels = 8\nmax_channels = 64\ntargets = 2\n";
  const char* compared[] = {"basis/split.json", "dis/disentangler_loss.csv", "gan/metrics.csv", "eval/metrics.csv"};
  for (const std::string run : {"a", "b"}) {
    const std::string d = (root / run).string() + "/";
    const std::string cli_q = "'" + cli + "' ";
    const std::string steps[] = {
        "synth --seed 3 --identities 8 --clips 1 --frames 12 --out " + d + "corpus",
        "fit-basis --seed 3 --corpus " + d + "corpus --out " + d + "basis",
        "train-disentangler --seed 3 --corpus " + d + "corpus --basis " + d + "basis --steps 100 --out " + d + "dis",
        "train-gan --seed 3 --corpus " + d + "corpus --split " + d + "basis/split.json --config " + (root / "gan.cfg").string() +
            " --steps 10 --out " + d + "gan",
        "reenact --seed 3 --corpus " + d + "corpus --generator " + d + "gan/checkpoint.mnet --driver-clip id001_clip00 " +
            "--target-clip id004_clip00 --targets 2 --landmark-transformer --disentangler " + d + "dis/disentangler.mnet " +
            "--basis " + d + "basis --out " + d + "re",
        "eval --reference " + d + "re/reference --generated " + d + "re --out " + d + "eval",
    };
    for (const auto& s : steps) {
      if (const int rc = shell(cli_q + s + " >>'" + (root / "log.txt").string() + "' 2>&1"); rc != 0) {
        return {false, fmt("'%s' exited with %d (log in %s)", s.substr(0, s.find(' ')).c_str(), rc, root.c_str())};
      }
    }
  }
  std::string differing;
  for (const char* f : compared) {
    const std::string a = slurp(root / "a" / f);
    if (a.empty() || a != slurp(root / "b" / f)) differing += std::string(" ") + f;
  }
  const std::string csv = slurp(root / "a/eval/metrics.csv");
  const double elapsed = seconds_since(t0);
  if (differing.empty()) fs::remove_all(root);
  return {differing.empty(),
          differing.empty()
              ? fmt("synth -> fit-basis -> train-disentangler -> train-gan -> reenact -> eval twice: %zu-byte metrics CSV "
                    "byte-identical, %.1f s",
                    csv.size(), elapsed)
              : "outputs differ:" + differing};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  int only = 0;
  std::string cli = MNET_CLI;
  app.add_option("--only", only, "Run a single criterion (1-11)")->check(CLI::Range(1, 11));
  app.add_option("--cli", cli, "Path to the marionette executable");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"decomposition identities", decomposition},
      {"PCA oracle", pca_oracle},
      {"landmark transform round trip", landmark_round_trip},
      {"attention invariants", attention_invariants},
      {"warp invariants", warp_invariants},
      {"positional encoding", encoding_formula},
      {"disentangler learning", disentangler_learning},
      {"GAN smoke training", gan_smoke},
      {"metrics", metrics},
      {"CLI determinism", [&] { return cli_determinism(cli); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (only != 0 && static_cast<int>(i) + 1 != only) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
