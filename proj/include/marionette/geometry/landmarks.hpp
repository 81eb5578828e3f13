#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace mnet::geometry {

inline constexpr int kNumLandmarks = 68;

template <typename Scalar>
using Landmarks = Eigen::Matrix<Scalar, kNumLandmarks, 3>;
using Landmark68 = Landmarks<double>;

template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

class DegenerateLandmarkError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Maps canonical coordinates to observed ones: l = scale * R * l_bar + t.
template <typename Scalar>
struct SimilarityTransform {
  Scalar scale = Scalar(1);
  Matrix3<Scalar> rotation = Matrix3<Scalar>::Identity();
  Vector3<Scalar> translation = Vector3<Scalar>::Zero();

  static SimilarityTransform identity() { return {}; }
};

template <typename Scalar>
Landmarks<Scalar> apply(const SimilarityTransform<Scalar>& t, const Landmarks<Scalar>& l) {
  Landmarks<Scalar> out = (t.scale * (l * t.rotation.transpose())).eval();
  out.rowwise() += t.translation.transpose();
  return out;
}

template <typename Scalar>
Landmarks<Scalar> denormalize(const Landmarks<Scalar>& normalized, const SimilarityTransform<Scalar>& t) {
  return apply(t, normalized);
}

template <typename Scalar>
Landmarks<Scalar> inverse_apply(const SimilarityTransform<Scalar>& t, const Landmarks<Scalar>& l) {
  Landmarks<Scalar> centered = l;
  centered.rowwise() -= t.translation.transpose();
  return (centered * t.rotation / t.scale).eval();
}

template <typename Scalar>
void require_non_degenerate(const Landmarks<Scalar>& l, const char* what) {
  if (!l.allFinite()) throw DegenerateLandmarkError(std::string(what) + " contains non-finite coordinates");
  Landmarks<Scalar> centered = l;
  centered.rowwise() -= l.colwise().mean();
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(centered.transpose() * centered);
  const auto sv = svd.singularValues();
  if (!(sv[0] > Scalar(0)) || sv[1] <= Scalar(1e-12) * sv[0]) {
    throw DegenerateLandmarkError(std::string(what) + " is degenerate (points collinear or coincident)");
  }
}

// Least-squares similarity taking `reference` onto `observed`.
template <typename Scalar>
SimilarityTransform<Scalar> fit_similarity(const Landmarks<Scalar>& reference, const Landmarks<Scalar>& observed) {
  require_non_degenerate(observed, "landmark");
  require_non_degenerate(reference, "template");
  const Vector3<Scalar> mu_ref = reference.colwise().mean().transpose();
  const Vector3<Scalar> mu_obs = observed.colwise().mean().transpose();
  Landmarks<Scalar> x_ref = reference;
  Landmarks<Scalar> x_obs = observed;
  x_ref.rowwise() -= mu_ref.transpose();
  x_obs.rowwise() -= mu_obs.transpose();

  const Matrix3<Scalar> cross = x_obs.transpose() * x_ref / Scalar(kNumLandmarks);
  Eigen::JacobiSVD<Matrix3<Scalar>> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto sv = svd.singularValues();
  if (sv[1] <= Scalar(1e-12) * sv[0]) {
    throw DegenerateLandmarkError("cross-covariance is rank deficient; alignment is not unique");
  }
  Vector3<Scalar> signs = Vector3<Scalar>::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < Scalar(0)) signs[2] = Scalar(-1);

  SimilarityTransform<Scalar> t;
  t.rotation = svd.matrixU() * signs.asDiagonal() * svd.matrixV().transpose();
  const Scalar ref_var = x_ref.squaredNorm() / Scalar(kNumLandmarks);
  t.scale = sv.dot(signs) / ref_var;
  if (!(t.scale > Scalar(0))) throw DegenerateLandmarkError("similarity fit produced a non-positive scale");
  t.translation = mu_obs - t.scale * t.rotation * mu_ref;
  return t;
}

template <typename Scalar>
struct NormalizedLandmark {
  Landmarks<Scalar> landmark;
  SimilarityTransform<Scalar> transform;
};

// Removes scale, translation and rotation by Procrustes alignment onto the
// template; denormalize(result.landmark, result.transform) restores `l`.
template <typename Scalar>
NormalizedLandmark<Scalar> normalize_landmark(const Landmarks<Scalar>& l, const Landmarks<Scalar>& templ) {
  NormalizedLandmark<Scalar> out;
  out.transform = fit_similarity(templ, l);
  out.landmark = inverse_apply(out.transform, l);
  return out;
}

// ------------------------------------------------------------- groups

enum class DrawGroup { kLeftEye, kRightEye, kContour, kNose, kLeftEyebrow, kRightEyebrow, kInnerMouth, kOuterMouth };

struct DrawGroupSpec {
  DrawGroup id;
  const char* name;
  std::vector<int> indices;
  bool closed;
  std::array<double, 3> color;
};

// Draw order of the rasterizer; later groups paint over earlier ones.
const std::array<DrawGroupSpec, 8>& draw_groups();

struct ExpressionGroupSpec {
  const char* name;
  std::vector<int> indices;
  int components;
};

inline constexpr int kNumExpressionGroups = 5;
inline constexpr int kExpressionDim = 48;
inline constexpr std::array<int, kNumExpressionGroups> kGroupComponents = {8, 8, 8, 16, 8};

// left eye, right eye, eyebrows, mouth, other. Together they partition 0..67.
const std::array<ExpressionGroupSpec, kNumExpressionGroups>& expression_groups();

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> flatten_group(const Landmarks<Scalar>& l, std::span<const int> indices) {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v(3 * static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i) v.template segment<3>(3 * static_cast<Eigen::Index>(i)) = l.row(indices[i]).transpose();
  return v;
}

template <typename Scalar, typename Derived>
void scatter_group(Landmarks<Scalar>& l, std::span<const int> indices, const Eigen::MatrixBase<Derived>& v) {
  for (std::size_t i = 0; i < indices.size(); ++i) l.row(indices[i]) = v.template segment<3>(3 * static_cast<Eigen::Index>(i)).transpose();
}

// ------------------------------------------------------- decomposition

template <typename Scalar>
struct LandmarkCorpusStats {
  Landmarks<Scalar> mean_geometry = Landmarks<Scalar>::Zero();
  std::vector<Landmarks<Scalar>> identity_geometry;               // per video
  std::vector<std::vector<Landmarks<Scalar>>> expression_offsets;  // per video, per frame
};

// mean = pooled mean over every frame; identity(c) = video mean - mean;
// expression(c, t) = frame - video mean.
template <typename Scalar>
LandmarkCorpusStats<Scalar> decompose_corpus(const std::vector<std::vector<Landmarks<Scalar>>>& videos) {
  if (videos.empty()) throw std::invalid_argument("decompose_corpus: empty corpus");
  LandmarkCorpusStats<Scalar> stats;
  std::vector<Landmarks<Scalar>> video_means;
  std::size_t total_frames = 0;
  Landmarks<Scalar> grand = Landmarks<Scalar>::Zero();
  for (std::size_t c = 0; c < videos.size(); ++c) {
    if (videos[c].empty()) throw std::invalid_argument("decompose_corpus: video " + std::to_string(c) + " has no frames");
    Landmarks<Scalar> acc = Landmarks<Scalar>::Zero();
    for (const auto& frame : videos[c]) {
      acc += frame;
      grand += frame;
    }
    total_frames += videos[c].size();
    video_means.push_back(acc / Scalar(videos[c].size()));
  }
  stats.mean_geometry = grand / Scalar(total_frames);
  for (std::size_t c = 0; c < videos.size(); ++c) {
    stats.identity_geometry.push_back(video_means[c] - stats.mean_geometry);
    std::vector<Landmarks<Scalar>> offsets;
    offsets.reserve(videos[c].size());
    for (const auto& frame : videos[c]) offsets.push_back(frame - video_means[c]);
    stats.expression_offsets.push_back(std::move(offsets));
  }
  return stats;
}

// ------------------------------------------------------------- PCA basis

template <typename Scalar>
struct GroupBasis {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> basis;  // (3 * points) x components, orthonormal columns
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> stddev;              // per component
};

template <typename Scalar>
struct ExpressionBasis {
  std::array<GroupBasis<Scalar>, kNumExpressionGroups> groups;
  Landmarks<Scalar> mean_landmark = Landmarks<Scalar>::Zero();
};

template <typename Scalar>
using ExpressionCoeffs = Eigen::Matrix<Scalar, kExpressionDim, 1>;

// Per-group PCA of the expression offsets (descending eigenvalues,
// largest-magnitude entry of each component made positive).
ExpressionBasis<double> fit_expression_basis(const LandmarkCorpusStats<double>& stats);

template <typename Scalar>
ExpressionCoeffs<Scalar> project_expression(const Landmarks<Scalar>& expression, const ExpressionBasis<Scalar>& basis) {
  ExpressionCoeffs<Scalar> alpha;
  int offset = 0;
  const auto& specs = expression_groups();
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& gb = basis.groups[static_cast<std::size_t>(g)];
    const auto v = flatten_group(expression, std::span<const int>(specs[static_cast<std::size_t>(g)].indices));
    const auto k = gb.basis.cols();
    alpha.segment(offset, k) = ((gb.basis.transpose() * v).array() / gb.stddev.array()).matrix();
    offset += static_cast<int>(k);
  }
  return alpha;
}

template <typename Scalar>
Landmarks<Scalar> reconstruct_expression(const ExpressionCoeffs<Scalar>& alpha, const ExpressionBasis<Scalar>& basis,
                                         Scalar lambda_exp) {
  Landmarks<Scalar> out = Landmarks<Scalar>::Zero();
  int offset = 0;
  const auto& specs = expression_groups();
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& gb = basis.groups[static_cast<std::size_t>(g)];
    const auto k = gb.basis.cols();
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> coeffs = (alpha.segment(offset, k).array() * gb.stddev.array()).matrix();
    scatter_group(out, std::span<const int>(specs[static_cast<std::size_t>(g)].indices), lambda_exp * (gb.basis * coeffs));
    offset += static_cast<int>(k);
  }
  return out;
}

inline constexpr double kDefaultLambdaExp = 1.5;

// mean + average(target identities) + driver expression.
template <typename Scalar>
Landmarks<Scalar> transform_landmark(std::span<const Landmarks<Scalar>> target_identities,
                                     const Landmarks<Scalar>& driver_expression, const Landmarks<Scalar>& mean_geometry) {
  if (target_identities.empty()) throw std::invalid_argument("transform_landmark: no target identity estimates");
  Landmarks<Scalar> id = Landmarks<Scalar>::Zero();
  for (const auto& t : target_identities) id += t;
  id /= Scalar(target_identities.size());
  return mean_geometry + id + driver_expression;
}

template <typename Scalar>
struct LandmarkParts {
  Landmarks<Scalar> identity;
  Landmarks<Scalar> expression;
};

// Splits a normalized landmark given predicted whitened coefficients:
// expression = lambda * basis(alpha), identity = l - mean - expression.
template <typename Scalar>
LandmarkParts<Scalar> split_landmark(const Landmarks<Scalar>& normalized, const ExpressionCoeffs<Scalar>& alpha,
                                     const ExpressionBasis<Scalar>& basis, Scalar lambda_exp) {
  LandmarkParts<Scalar> parts;
  parts.expression = reconstruct_expression(alpha, basis, lambda_exp);
  parts.identity = normalized - basis.mean_landmark - parts.expression;
  return parts;
}

// ------------------------------------------------------------ head pose

struct PoseAngles {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  bool near_gimbal_lock = false;
};

// R = Rz(roll) * Ry(yaw) * Rx(pitch); yaw turns about the vertical (y) axis.
template <typename Scalar>
PoseAngles rotation_to_angles(const Matrix3<Scalar>& r) {
  constexpr double to_deg = 180.0 / std::numbers::pi;
  auto wrap = [](double deg) { return deg <= -180.0 ? deg + 360.0 : deg; };
  PoseAngles a;
  const double r00 = static_cast<double>(r(0, 0));
  const double r10 = static_cast<double>(r(1, 0));
  const double r20 = static_cast<double>(r(2, 0));
  a.yaw = wrap(std::atan2(-r20, std::hypot(r00, r10)) * to_deg);
  a.pitch = wrap(std::atan2(static_cast<double>(r(2, 1)), static_cast<double>(r(2, 2))) * to_deg);
  a.roll = wrap(std::atan2(r10, r00) * to_deg);
  a.near_gimbal_lock = std::abs(a.yaw) > 89.0;
  return a;
}

template <typename Scalar>
Matrix3<Scalar> angles_to_rotation(double yaw_deg, double pitch_deg, double roll_deg) {
  constexpr double to_rad = std::numbers::pi / 180.0;
  using Angle = Eigen::AngleAxis<Scalar>;
  return (Angle(Scalar(roll_deg * to_rad), Vector3<Scalar>::UnitZ()) *
          Angle(Scalar(yaw_deg * to_rad), Vector3<Scalar>::UnitY()) *
          Angle(Scalar(pitch_deg * to_rad), Vector3<Scalar>::UnitX()))
      .toRotationMatrix();
}

template <typename Scalar>
PoseAngles head_pose_angles(const Landmarks<Scalar>& l, const Landmarks<Scalar>& templ) {
  return rotation_to_angles(fit_similarity(templ, l).rotation);
}

// Iterative mean shape under similarity alignment, centered with unit RMS
// radius. Used as the canonical template when none is given.
Landmark68 generalized_procrustes_mean(std::span<const Landmark68> shapes, int iterations = 10);

struct VideoBasisFit {
  Landmark68 template_landmark;                       // GPA mean of every frame
  std::vector<std::vector<Landmark68>> normalized;  // per video, per frame
  LandmarkCorpusStats<double> stats;
  ExpressionBasis<double> basis;
};

// Observed (posed) landmark videos -> template, normalized frames,
// decomposition and grouped PCA. New frames are normalized onto
// basis.mean_landmark.
VideoBasisFit fit_basis_from_videos(const std::vector<std::vector<Landmark68>>& videos);

}  // namespace mnet::geometry
