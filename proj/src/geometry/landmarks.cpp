#include "marionette/geometry/landmarks.hpp"

#include <algorithm>
#include <numeric>

#include <Eigen/Eigenvalues>

namespace mnet::geometry {

namespace {

std::vector<int> range(int first, int last) {
  std::vector<int> v(static_cast<std::size_t>(last - first + 1));
  std::iota(v.begin(), v.end(), first);
  return v;
}

std::vector<int> join(std::vector<int> a, const std::vector<int>& b) {
  for (int i : b) a.push_back(i);
  return a;
}

constexpr std::array<double, 3> kRed = {1, 0, 0};
constexpr std::array<double, 3> kGreen = {0, 1, 0};
constexpr std::array<double, 3> kBlue = {0, 0, 1};
constexpr std::array<double, 3> kYellow = {1, 1, 0};
constexpr std::array<double, 3> kCyan = {0, 1, 1};

}  // namespace

const std::array<DrawGroupSpec, 8>& draw_groups() {
  static const std::array<DrawGroupSpec, 8> groups = {{
      {DrawGroup::kLeftEye, "left_eye", range(42, 47), true, kRed},
      {DrawGroup::kRightEye, "right_eye", range(36, 41), true, kRed},
      {DrawGroup::kContour, "contour", range(0, 16), false, kGreen},
      {DrawGroup::kNose, "nose", range(27, 35), false, kBlue},
      {DrawGroup::kLeftEyebrow, "left_eyebrow", range(22, 26), false, kYellow},
      {DrawGroup::kRightEyebrow, "right_eyebrow", range(17, 21), false, kYellow},
      {DrawGroup::kInnerMouth, "inner_mouth", range(60, 67), true, kCyan},
      {DrawGroup::kOuterMouth, "outer_mouth", range(48, 59), true, kCyan},
  }};
  return groups;
}

const std::array<ExpressionGroupSpec, kNumExpressionGroups>& expression_groups() {
  static const std::array<ExpressionGroupSpec, kNumExpressionGroups> groups = {{
      {"left_eye", range(42, 47), kGroupComponents[0]},
      {"right_eye", range(36, 41), kGroupComponents[1]},
      {"eyebrows", range(17, 26), kGroupComponents[2]},
      {"mouth", range(48, 67), kGroupComponents[3]},
      {"other", join(range(0, 16), range(27, 35)), kGroupComponents[4]},
  }};
  return groups;
}

ExpressionBasis<double> fit_expression_basis(const LandmarkCorpusStats<double>& stats) {
  std::vector<const Landmark68*> frames;
  for (const auto& video : stats.expression_offsets) {
    for (const auto& f : video) frames.push_back(&f);
  }
  const auto n = static_cast<Eigen::Index>(frames.size());

  ExpressionBasis<double> basis;
  basis.mean_landmark = stats.mean_geometry;
  const auto& specs = expression_groups();
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& spec = specs[static_cast<std::size_t>(g)];
    if (n <= spec.components) {
      throw std::invalid_argument("fit_expression_basis: group '" + std::string(spec.name) + "' needs more than " +
                                  std::to_string(spec.components) + " frames, corpus has " + std::to_string(n));
    }
    const std::span<const int> idx(spec.indices);
    const auto dim = static_cast<Eigen::Index>(3 * idx.size());
    Eigen::MatrixXd data(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) data.row(i) = flatten_group(*frames[static_cast<std::size_t>(i)], idx).transpose();
    // Offsets are zero-mean per video, so the pooled mean is zero too; center anyway.
    data.rowwise() -= data.colwise().mean();
    const Eigen::MatrixXd cov = data.transpose() * data / static_cast<double>(n);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("fit_expression_basis: eigensolver failed");
    const int k = spec.components;
    GroupBasis<double> gb;
    gb.basis.resize(dim, k);
    gb.stddev.resize(k);
    const double top = std::max(eig.eigenvalues()(dim - 1), 0.0);
    const double floor = std::max(top * 1e-24, 1e-30);
    for (int j = 0; j < k; ++j) {
      const Eigen::Index src = dim - 1 - j;  // eigenvalues come ascending
      Eigen::VectorXd col = eig.eigenvectors().col(src);
      Eigen::Index arg = 0;
      col.cwiseAbs().maxCoeff(&arg);
      if (col[arg] < 0) col = -col;
      gb.basis.col(j) = col;
      gb.stddev[j] = std::sqrt(std::max(eig.eigenvalues()(src), floor));
    }
    basis.groups[static_cast<std::size_t>(g)] = std::move(gb);
  }
  return basis;
}

Landmark68 generalized_procrustes_mean(std::span<const Landmark68> shapes, int iterations) {
  if (shapes.empty()) throw std::invalid_argument("generalized_procrustes_mean: no shapes");
  auto standardize = [](Landmark68 m) {
    m.rowwise() -= m.colwise().mean();
    const double rms = std::sqrt(m.squaredNorm() / kNumLandmarks);
    if (!(rms > 0)) throw DegenerateLandmarkError("generalized_procrustes_mean: collapsed mean shape");
    return Landmark68(m / rms);
  };
  Landmark68 mean = standardize(shapes.front());
  for (int it = 0; it < iterations; ++it) {
    Landmark68 acc = Landmark68::Zero();
    for (const auto& s : shapes) acc += normalize_landmark(s, mean).landmark;
    const Landmark68 next = standardize(acc / static_cast<double>(shapes.size()));
    // Keep the frame of the previous estimate so the mean does not drift in rotation.
    const Landmark68 aligned = normalize_landmark(next, mean).landmark;
    const double change = (standardize(aligned) - mean).norm();
    mean = standardize(aligned);
    if (change < 1e-12) break;
  }
  return mean;
}

VideoBasisFit fit_basis_from_videos(const std::vector<std::vector<Landmark68>>& videos) {
  std::vector<Landmark68> all;
  for (const auto& v : videos) all.insert(all.end(), v.begin(), v.end());
  VideoBasisFit fit;
  fit.template_landmark = generalized_procrustes_mean(all);
  for (const auto& v : videos) {
    std::vector<Landmark68> out;
    out.reserve(v.size());
    for (const auto& f : v) out.push_back(normalize_landmark(f, fit.template_landmark).landmark);
    fit.normalized.push_back(std::move(out));
  }
  fit.stats = decompose_corpus(fit.normalized);
  fit.basis = fit_expression_basis(fit.stats);
  return fit;
}

}  // namespace mnet::geometry
