#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include <Eigen/Geometry>

#include "marionette/core/rng.hpp"
#include "marionette/geometry/io.hpp"
#include "marionette/geometry/landmarks.hpp"
#include "marionette/geometry/raster.hpp"

namespace mnet::geometry {
namespace {

Landmark68 random_landmark(Rng& rng, double scale = 1.0) {
  Landmark68 l;
  for (int i = 0; i < kNumLandmarks; ++i) {
    for (int c = 0; c < 3; ++c) l(i, c) = scale * rng.normal();
  }
  return l;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

// sin of the largest principal angle between two orthonormal column sets.
double max_principal_sin(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd residual = a - b * (b.transpose() * a);
  return Eigen::JacobiSVD<Eigen::MatrixXd>(residual).singularValues()(0);
}

TEST(Normalize, TemplateMapsToItselfWithIdentityTransform) {
  Rng rng(1);
  const Landmark68 templ = random_landmark(rng);
  const auto n = normalize_landmark(templ, templ);
  EXPECT_LT(max_abs(n.landmark - templ), 1e-12);
  EXPECT_NEAR(n.transform.scale, 1.0, 1e-12);
  EXPECT_LT(max_abs(n.transform.rotation - Eigen::Matrix3d::Identity()), 1e-12);
  EXPECT_LT(n.transform.translation.norm(), 1e-12);
}

TEST(Normalize, RecoversConstructedTransform) {
  Rng rng(2);
  const Landmark68 templ = random_landmark(rng);
  for (int trial = 0; trial < 20; ++trial) {
    SimilarityTransform<double> t;
    t.scale = 2.0;
    t.rotation = random_rotation(rng);
    t.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()) * 10.0;
    const Landmark68 l = apply(t, templ);
    const auto n = normalize_landmark(l, templ);
    EXPECT_NEAR(n.transform.scale, 2.0, 1e-9);
    EXPECT_LT(max_abs(n.transform.rotation - t.rotation), 1e-9);
    EXPECT_LT((n.transform.translation - t.translation).norm(), 1e-9);
    EXPECT_LT(max_abs(n.landmark - templ), 1e-9);
  }
}

TEST(Normalize, AgreesWithEigenUmeyama) {
  Rng rng(3);
  const Landmark68 templ = random_landmark(rng);
  for (int trial = 0; trial < 10; ++trial) {
    const Landmark68 l = random_landmark(rng, 3.0);
    const auto n = normalize_landmark(l, templ);
    const Eigen::Matrix4d u = Eigen::umeyama(templ.transpose(), l.transpose(), true);
    const double s = u.block<3, 3>(0, 0).col(0).norm();
    EXPECT_NEAR(n.transform.scale, s, 1e-9);
    EXPECT_LT(max_abs(n.transform.rotation - u.block<3, 3>(0, 0) / s), 1e-9);
    EXPECT_LT((n.transform.translation - u.block<3, 1>(0, 3)).norm(), 1e-9);
    EXPECT_LT(max_abs(n.transform.rotation.transpose() * n.transform.rotation - Eigen::Matrix3d::Identity()), 1e-9);
    EXPECT_NEAR(n.transform.rotation.determinant(), 1.0, 1e-9);
  }
}

TEST(Normalize, AlignmentIsLocalMinimumUnderRotationPerturbation) {
  Rng rng(4);
  const Landmark68 templ = random_landmark(rng);
  const Landmark68 l = random_landmark(rng, 2.0);
  const auto fit = fit_similarity(templ, l);
  const double best = (apply(fit, templ) - l).squaredNorm();
  for (int axis = 0; axis < 3; ++axis) {
    for (double eps : {1e-3, -1e-3, 1e-2, -1e-2}) {
      auto perturbed = fit;
      perturbed.rotation = fit.rotation * Eigen::AngleAxisd(eps, Eigen::Vector3d::Unit(axis)).toRotationMatrix();
      EXPECT_GT((apply(perturbed, templ) - l).squaredNorm(), best);
    }
  }
  for (double ds : {0.99, 1.01}) {
    auto perturbed = fit;
    perturbed.scale *= ds;
    EXPECT_GT((apply(perturbed, templ) - l).squaredNorm(), best);
  }
}

TEST(Normalize, RejectsCollinearLandmarks) {
  Rng rng(5);
  const Landmark68 templ = random_landmark(rng);
  Landmark68 line = Landmark68::Zero();
  for (int i = 0; i < kNumLandmarks; ++i) line.row(i) = Eigen::RowVector3d(1, 2, 3) * i;
  EXPECT_THROW(normalize_landmark(line, templ), DegenerateLandmarkError);
  EXPECT_THROW(normalize_landmark(Landmark68(Landmark68::Constant(4.0)), templ), DegenerateLandmarkError);
  Landmark68 bad = templ;
  bad(3, 1) = std::nan("");
  EXPECT_THROW(normalize_landmark(bad, templ), DegenerateLandmarkError);
}

TEST(Normalize, RoundTripOnThousandRandomLandmarks) {
  Rng rng(6);
  const Landmark68 templ = random_landmark(rng);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Landmark68 l = random_landmark(rng, 1.0 + 100.0 * rng.uniform());
    const auto n = normalize_landmark(l, templ);
    worst = std::max(worst, max_abs(denormalize(n.landmark, n.transform) - l));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Normalize, FloatInstantiation) {
  Rng rng(7);
  const Landmarks<float> templ = random_landmark(rng).cast<float>();
  const Landmarks<float> l = random_landmark(rng).cast<float>();
  const auto n = normalize_landmark(l, templ);
  EXPECT_LT((denormalize(n.landmark, n.transform) - l).cwiseAbs().maxCoeff(), 1e-4f);
}

TEST(Denormalize, IdentityAndPureTranslation) {
  Rng rng(8);
  const Landmark68 l = random_landmark(rng);
  EXPECT_EQ(denormalize(l, SimilarityTransform<double>::identity()), l);
  SimilarityTransform<double> t;
  t.translation = {1.5, -2.0, 0.25};
  const Landmark68 moved = denormalize(l, t);
  for (int i = 0; i < kNumLandmarks; ++i) {
    EXPECT_EQ(moved.row(i), l.row(i) + t.translation.transpose());
  }
}

TEST(Decompose, IdenticalFramesGiveZeroOffsets) {
  Rng rng(9);
  const Landmark68 a = random_landmark(rng);
  const auto stats = decompose_corpus<double>({{a, a, a}});
  EXPECT_LT(max_abs(stats.identity_geometry[0]), 1e-15);
  for (const auto& e : stats.expression_offsets[0]) EXPECT_LT(max_abs(e), 1e-15);
}

TEST(Decompose, TwoFramesSplitSymmetrically) {
  Rng rng(10);
  const Landmark68 a = random_landmark(rng);
  const Landmark68 b = random_landmark(rng);
  const auto stats = decompose_corpus<double>({{a, b}});
  EXPECT_LT(max_abs(stats.expression_offsets[0][0] - (a - b) / 2), 1e-15);
  EXPECT_LT(max_abs(stats.expression_offsets[0][1] + (a - b) / 2), 1e-15);
}

TEST(Decompose, ReconstructionAndZeroMeanOnRandomCorpus) {
  Rng rng(11);
  std::vector<std::vector<Landmark68>> videos(5);
  for (std::size_t c = 0; c < videos.size(); ++c) {
    for (int t = 0; t < 3 + static_cast<int>(c); ++t) videos[c].push_back(random_landmark(rng));
  }
  const auto stats = decompose_corpus(videos);

  Landmark68 pooled = Landmark68::Zero();
  int count = 0;
  for (const auto& v : videos) {
    for (const auto& f : v) {
      pooled += f;
      ++count;
    }
  }
  EXPECT_LT(max_abs(stats.mean_geometry - pooled / count), 1e-12);
  for (std::size_t c = 0; c < videos.size(); ++c) {
    Landmark68 sum = Landmark68::Zero();
    for (std::size_t t = 0; t < videos[c].size(); ++t) {
      const auto& e = stats.expression_offsets[c][t];
      sum += e;
      EXPECT_LT(max_abs(stats.mean_geometry + stats.identity_geometry[c] + e - videos[c][t]), 1e-12);
    }
    EXPECT_LT(max_abs(sum), 1e-12);
  }
}

TEST(Decompose, RejectsEmptyInput) {
  EXPECT_THROW(decompose_corpus<double>({}), std::invalid_argument);
  EXPECT_THROW(decompose_corpus<double>({{}}), std::invalid_argument);
}

TEST(Groups, PartitionAllPointsWithExpectedSizes) {
  std::set<int> seen;
  int components = 0;
  const std::array<int, 5> sizes = {6, 6, 10, 20, 26};
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& spec = expression_groups()[static_cast<std::size_t>(g)];
    EXPECT_EQ(static_cast<int>(spec.indices.size()), sizes[static_cast<std::size_t>(g)]) << spec.name;
    for (int i : spec.indices) EXPECT_TRUE(seen.insert(i).second) << i;
    components += spec.components;
  }
  EXPECT_EQ(seen.size(), 68u);
  EXPECT_EQ(*seen.begin(), 0);
  EXPECT_EQ(*seen.rbegin(), 67);
  EXPECT_EQ(components, kExpressionDim);
  EXPECT_EQ(kExpressionDim, 48);

  std::set<int> drawn;
  for (const auto& d : draw_groups()) drawn.insert(d.indices.begin(), d.indices.end());
  EXPECT_EQ(drawn.size(), 68u);
}

// Corpus whose per-group offsets are random combinations of the given modes.
LandmarkCorpusStats<double> corpus_from_modes(const std::array<Eigen::MatrixXd, kNumExpressionGroups>& modes, int videos,
                                              int frames, Rng& rng) {
  std::vector<std::vector<Landmark68>> data(static_cast<std::size_t>(videos));
  const auto& specs = expression_groups();
  for (auto& video : data) {
    const Landmark68 id = random_landmark(rng);
    for (int t = 0; t < frames; ++t) {
      Landmark68 l = id;
      for (int g = 0; g < kNumExpressionGroups; ++g) {
        const auto& m = modes[static_cast<std::size_t>(g)];
        Eigen::VectorXd coeff(m.cols());
        for (int k = 0; k < m.cols(); ++k) coeff[k] = (m.cols() - k) * rng.normal();
        Eigen::VectorXd offset = m * coeff;
        const std::span<const int> idx(specs[static_cast<std::size_t>(g)].indices);
        Eigen::VectorXd current = flatten_group(l, idx);
        current += offset;
        scatter_group(l, idx, current);
      }
      video.push_back(l);
    }
  }
  return decompose_corpus(data);
}

Eigen::MatrixXd random_orthonormal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

TEST(ExpressionBasis, RecoversKnownModeSubspace) {
  Rng rng(12);
  std::array<Eigen::MatrixXd, kNumExpressionGroups> modes;
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto rows = static_cast<Eigen::Index>(3 * expression_groups()[static_cast<std::size_t>(g)].indices.size());
    modes[static_cast<std::size_t>(g)] = random_orthonormal(rows, 4, rng);
  }
  const auto basis = fit_expression_basis(corpus_from_modes(modes, 6, 20, rng));
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& b = basis.groups[static_cast<std::size_t>(g)].basis;
    EXPECT_LT(max_principal_sin(modes[static_cast<std::size_t>(g)], b.leftCols(4)), 1e-6);
    EXPECT_LT(max_abs(b.transpose() * b - Eigen::MatrixXd::Identity(b.cols(), b.cols())), 1e-8);
    EXPECT_EQ(b.cols(), kGroupComponents[static_cast<std::size_t>(g)]);
  }
}

class FittedBasis : public ::testing::Test {
 protected:
  void SetUp() override {
    Rng rng(13);
    std::vector<std::vector<Landmark68>> videos(8);
    for (auto& v : videos) {
      const Landmark68 id = random_landmark(rng, 5.0);
      for (int t = 0; t < 30; ++t) v.push_back(id + random_landmark(rng, 0.3));
    }
    stats = decompose_corpus(videos);
    basis = fit_expression_basis(stats);
  }
  LandmarkCorpusStats<double> stats;
  ExpressionBasis<double> basis;
};

TEST_F(FittedBasis, ComponentsSortedAndSignNormalized) {
  for (const auto& gb : basis.groups) {
    for (Eigen::Index k = 1; k < gb.stddev.size(); ++k) EXPECT_GE(gb.stddev[k - 1], gb.stddev[k]);
    for (Eigen::Index k = 0; k < gb.basis.cols(); ++k) {
      Eigen::Index arg = 0;
      gb.basis.col(k).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(gb.basis(arg, k), 0.0);
    }
  }
}

TEST_F(FittedBasis, WhitenedCoefficientsAreStandardized) {
  std::vector<ExpressionCoeffs<double>> alphas;
  for (const auto& v : stats.expression_offsets) {
    for (const auto& e : v) alphas.push_back(project_expression(e, basis));
  }
  ExpressionCoeffs<double> mean = ExpressionCoeffs<double>::Zero();
  for (const auto& a : alphas) mean += a;
  mean /= static_cast<double>(alphas.size());
  ExpressionCoeffs<double> var = ExpressionCoeffs<double>::Zero();
  for (const auto& a : alphas) var += (a - mean).cwiseAbs2();
  var /= static_cast<double>(alphas.size());
  for (int k = 0; k < kExpressionDim; ++k) {
    EXPECT_LT(std::abs(mean[k]), 0.05) << k;
    EXPECT_GE(var[k], 0.9) << k;
    EXPECT_LE(var[k], 1.1) << k;
  }
}

TEST_F(FittedBasis, ProjectionExamples) {
  EXPECT_EQ(project_expression(Landmark68::Zero().eval(), basis), ExpressionCoeffs<double>::Zero());
  EXPECT_EQ(reconstruct_expression(ExpressionCoeffs<double>::Zero().eval(), basis, 1.5), Landmark68::Zero());

  int offset = 0;
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& gb = basis.groups[static_cast<std::size_t>(g)];
    for (int k = 0; k < gb.basis.cols(); k += 3) {
      Landmark68 e = Landmark68::Zero();
      scatter_group(e, std::span<const int>(expression_groups()[static_cast<std::size_t>(g)].indices),
                    (gb.basis.col(k) * gb.stddev[k]).eval());
      ExpressionCoeffs<double> expected = ExpressionCoeffs<double>::Zero();
      expected[offset + k] = 1.0;
      EXPECT_LT((project_expression(e, basis) - expected).cwiseAbs().maxCoeff(), 1e-9);
    }
    offset += static_cast<int>(gb.basis.cols());
  }
}

TEST_F(FittedBasis, ProjectReconstructMatchesExplicitProjector) {
  Rng rng(14);
  const Landmark68 e = random_landmark(rng);
  const Landmark68 got = reconstruct_expression(project_expression(e, basis), basis, 1.0);
  Landmark68 expected = Landmark68::Zero();
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& b = basis.groups[static_cast<std::size_t>(g)].basis;
    const Eigen::MatrixXd projector = b * b.transpose();
    const std::span<const int> idx(expression_groups()[static_cast<std::size_t>(g)].indices);
    scatter_group(expected, idx, (projector * flatten_group(e, idx)).eval());
  }
  EXPECT_LT(max_abs(got - expected), 1e-9);

  const Landmark68 scaled = reconstruct_expression(project_expression(e, basis), basis, 1.5);
  EXPECT_LT(max_abs(scaled - 1.5 * expected), 1e-9);
}

TEST_F(FittedBasis, ReconstructionErrorNonIncreasingInComponents) {
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& b = basis.groups[static_cast<std::size_t>(g)].basis;
    const std::span<const int> idx(expression_groups()[static_cast<std::size_t>(g)].indices);
    double previous = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k <= b.cols(); ++k) {
      const Eigen::MatrixXd bk = b.leftCols(k);
      double err = 0.0;
      for (const auto& v : stats.expression_offsets) {
        for (const auto& e : v) {
          const Eigen::VectorXd x = flatten_group(e, idx);
          err += (x - bk * (bk.transpose() * x)).squaredNorm();
        }
      }
      EXPECT_LE(err, previous + 1e-9);
      previous = err;
    }
  }
}

TEST(ExpressionBasis, RejectsTooFewFramesNamingGroup) {
  Rng rng(15);
  std::vector<std::vector<Landmark68>> videos(1);
  for (int t = 0; t < 12; ++t) videos[0].push_back(random_landmark(rng));
  try {
    fit_expression_basis(decompose_corpus(videos));
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("mouth"), std::string::npos) << e.what();
  }
}

TEST(TransformLandmark, Examples) {
  Rng rng(16);
  std::vector<std::vector<Landmark68>> videos = {{random_landmark(rng), random_landmark(rng), random_landmark(rng)},
                                                 {random_landmark(rng), random_landmark(rng)}};
  const auto stats = decompose_corpus(videos);
  const Landmark68 zero = Landmark68::Zero();

  const Landmark68 target_mean = (videos[1][0] + videos[1][1]) / 2;
  const std::vector<Landmark68> one = {stats.identity_geometry[1]};
  EXPECT_LT(max_abs(transform_landmark<double>(one, zero, stats.mean_geometry) - target_mean), 1e-12);

  const std::vector<Landmark68> same = {stats.identity_geometry[0]};
  for (std::size_t t = 0; t < videos[0].size(); ++t) {
    const Landmark68 out = transform_landmark<double>(same, stats.expression_offsets[0][t], stats.mean_geometry);
    EXPECT_LT(max_abs(out - videos[0][t]), 1e-9);
  }

  const std::vector<Landmark68> twice = {stats.identity_geometry[1], stats.identity_geometry[1]};
  const Landmark68 drv = stats.expression_offsets[0][1];
  EXPECT_LT(max_abs(transform_landmark<double>(twice, drv, stats.mean_geometry) -
                    transform_landmark<double>(one, drv, stats.mean_geometry)),
            1e-15);
  EXPECT_THROW(transform_landmark<double>({}, drv, stats.mean_geometry), std::invalid_argument);
}

Landmark68 all_at(double x, double y) {
  Landmark68 l = Landmark68::Zero();
  l.col(0).setConstant(x);
  l.col(1).setConstant(y);
  return l;
}

TEST(Rasterize, CoincidentPointsLightOnePixel) {
  const Image im = rasterize(all_at(10, 20), 32, 48);
  int lit = 0;
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x) {
      if (im.at(0, y, x) + im.at(1, y, x) + im.at(2, y, x) > 0) {
        ++lit;
        EXPECT_EQ(x, 10);
        EXPECT_EQ(y, 20);
      }
    }
  }
  EXPECT_EQ(lit, 1);
  // Outer mouth is drawn last: cyan.
  EXPECT_EQ(im.at(0, 20, 10), 0.0);
  EXPECT_EQ(im.at(1, 20, 10), 1.0);
  EXPECT_EQ(im.at(2, 20, 10), 1.0);
}

TEST(Rasterize, Deterministic) {
  Rng rng(17);
  Landmark68 l = random_landmark(rng, 12.0);
  l.col(0).array() += 32;
  l.col(1).array() += 32;
  const Image a = rasterize(l, 64, 64);
  const Image b = rasterize(l, 64, 64);
  EXPECT_EQ(a.data, b.data);
}

TEST(Rasterize, HorizontalChainFillsRowBetweenEndpoints) {
  // Every non-nose point sits on one pixel at (5, 30).
  const auto& nose = draw_groups()[3];
  ASSERT_EQ(std::string(nose.name), "nose");
  Landmark68 only_nose = all_at(5, 30);
  for (std::size_t i = 0; i < nose.indices.size(); ++i) {
    const double x = i == 0 ? 8.0 : (i == 1 ? 14.0 : 20.0);
    only_nose(nose.indices[i], 0) = x;
    only_nose(nose.indices[i], 1) = 12.0;
  }
  const Image im = rasterize(only_nose, 32, 32);
  for (int x = 0; x < 32; ++x) {
    const bool inside = x >= 8 && x <= 20;
    EXPECT_EQ(im.at(2, 12, x), inside ? 1.0 : 0.0) << x;
    EXPECT_EQ(im.at(0, 12, x), 0.0) << x;
  }
  for (int y = 0; y < 32; ++y) {
    if (y == 12 || y == 30) continue;
    for (int x = 0; x < 32; ++x) EXPECT_EQ(im.at(2, y, x), 0.0);
  }
}

TEST(Rasterize, ClipsInsteadOfRejecting) {
  Landmark68 l = all_at(-1000, 16);
  const auto& contour = draw_groups()[2];
  l(contour.indices[0], 0) = -1000;
  l(contour.indices[1], 0) = 1000;
  for (std::size_t i = 2; i < contour.indices.size(); ++i) l(contour.indices[i], 0) = 1000;
  const Image im = rasterize(l, 32, 32);
  for (int x = 0; x < 32; ++x) EXPECT_EQ(im.at(1, 16, x), 1.0) << x;
  EXPECT_THROW(rasterize(l, 16, 32), std::invalid_argument);
}

TEST(FaceMask, HullContainsEveryPointAndIsStrictlyConvex) {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 68; ++i) pts.emplace_back(rng.uniform(0, 40), rng.uniform(0, 40));
    const auto hull = convex_hull(pts);
    ASSERT_GE(hull.size(), 3u);
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Eigen::Vector2d e = hull[(i + 1) % hull.size()] - hull[i];
      for (const auto& p : pts) {
        const Eigen::Vector2d d = p - hull[i];
        EXPECT_GE(e.x() * d.y() - e.y() * d.x(), -1e-12);
      }
      const Eigen::Vector2d f = hull[(i + 2) % hull.size()] - hull[(i + 1) % hull.size()];
      EXPECT_GT(e.x() * f.y() - e.y() * f.x(), 0.0);
      EXPECT_NE(std::find(pts.begin(), pts.end(), hull[i]), pts.end());
    }
  }
}

TEST(FaceMask, MatchesHalfPlaneEnumeration) {
  Rng rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    Landmark68 l = random_landmark(rng, 9.0);
    l.col(0).array() += 24;
    l.col(1).array() += 20;
    const Image mask = face_mask(l, 40, 48);
    ASSERT_EQ(mask.channels, 1);
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 68; ++i) pts.emplace_back(l(i, 0), l(i, 1));
    const auto hull = convex_hull(pts);
    int inside_count = 0;
    for (int y = 0; y < 40; ++y) {
      for (int x = 0; x < 48; ++x) {
        bool inside = true;
        for (std::size_t i = 0; i < hull.size() && inside; ++i) {
          const Eigen::Vector2d e = hull[(i + 1) % hull.size()] - hull[i];
          const Eigen::Vector2d d = Eigen::Vector2d(x, y) - hull[i];
          inside = e.x() * d.y() - e.y() * d.x() >= -1e-9;
        }
        inside_count += inside;
        EXPECT_EQ(mask.at(0, y, x), inside ? 1.0 : 0.0) << x << "," << y;
      }
    }
    EXPECT_GT(inside_count, 0);
  }
}

TEST(FaceMask, AxisAlignedSquare) {
  Landmark68 l = all_at(10, 10);
  l(0, 0) = 20;
  l(1, 1) = 15;
  l(2, 0) = 20;
  l(2, 1) = 15;
  const Image mask = face_mask(l, 32, 32);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) EXPECT_EQ(mask.at(0, y, x), (x >= 10 && x <= 20 && y >= 10 && y <= 15) ? 1.0 : 0.0);
  EXPECT_EQ(std::count(mask.data.begin(), mask.data.end(), 0.0) + 11 * 6, 32 * 32);
}

TEST(HeadPose, ConstructedRotations) {
  Rng rng(18);
  const Landmark68 templ = random_landmark(rng);
  const auto zero = head_pose_angles(templ, templ);
  EXPECT_NEAR(zero.yaw, 0.0, 1e-9);
  EXPECT_NEAR(zero.pitch, 0.0, 1e-9);
  EXPECT_NEAR(zero.roll, 0.0, 1e-9);

  SimilarityTransform<double> t;
  t.rotation = Eigen::AngleAxisd(30.0 * std::numbers::pi / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const auto a = head_pose_angles(apply(t, templ), templ);
  EXPECT_NEAR(a.yaw, 30.0, 1e-6);
  EXPECT_NEAR(a.pitch, 0.0, 1e-6);
  EXPECT_NEAR(a.roll, 0.0, 1e-6);
  EXPECT_FALSE(a.near_gimbal_lock);

  t.rotation = angles_to_rotation<double>(-20.0, 35.0, 170.0);
  t.scale = 3.0;
  const auto b = head_pose_angles(apply(t, templ), templ);
  t.scale = 0.2;
  const auto c = head_pose_angles(apply(t, templ), templ);
  EXPECT_NEAR(b.yaw, -20.0, 1e-6);
  EXPECT_NEAR(b.pitch, 35.0, 1e-6);
  EXPECT_NEAR(b.roll, 170.0, 1e-6);
  EXPECT_NEAR(b.yaw, c.yaw, 1e-9);
  EXPECT_NEAR(b.pitch, c.pitch, 1e-9);
  EXPECT_NEAR(b.roll, c.roll, 1e-9);

  EXPECT_TRUE(rotation_to_angles(angles_to_rotation<double>(89.5, 10, 10)).near_gimbal_lock);
  const auto flip = rotation_to_angles(angles_to_rotation<double>(0, 0, 180));
  EXPECT_NEAR(flip.roll, 180.0, 1e-9);
}

TEST(LandmarkIo, JsonLinesRoundTrip) {
  Rng rng(19);
  std::vector<LandmarkRecord> records;
  for (int i = 0; i < 4; ++i) records.push_back({i < 2 ? "b" : "a", 3 - i, random_landmark(rng, 50.0)});
  const auto path = std::filesystem::temp_directory_path() / "mnet_landmarks_test.jsonl";
  write_landmarks_jsonl(path, records);
  const auto back = read_landmarks_jsonl(path);
  ASSERT_EQ(back.size(), records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].video, records[i].video);
    EXPECT_EQ(back[i].frame, records[i].frame);
    EXPECT_EQ(back[i].points, records[i].points);
  }
  const auto grouped = group_by_video(back);
  ASSERT_EQ(grouped.size(), 2u);
  EXPECT_EQ(grouped[0][0].video, "b");
  EXPECT_EQ(grouped[0][0].frame, 2);
  EXPECT_EQ(grouped[1][0].frame, 0);
  std::filesystem::remove(path);

  EXPECT_THROW(parse_landmark_record(R"({"video":"x","frame":0,"points":[[1,2,3]]})"), std::invalid_argument);
}

TEST_F(FittedBasis, CheckpointRoundTripKeepsOrthonormality) {
  const auto path = std::filesystem::temp_directory_path() / "mnet_basis_test.ckpt";
  save_basis(path, basis);
  const auto back = load_basis(path);
  std::filesystem::remove(path);
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& a = basis.groups[static_cast<std::size_t>(g)];
    const auto& b = back.groups[static_cast<std::size_t>(g)];
    EXPECT_LT(max_abs(b.basis.transpose() * b.basis - Eigen::MatrixXd::Identity(b.basis.cols(), b.basis.cols())), 1e-8);
    EXPECT_LT(max_abs(a.basis - b.basis), 1e-6);
    EXPECT_LT(max_abs(a.stddev - b.stddev), 1e-6 * a.stddev.maxCoeff());
  }
  EXPECT_LT(max_abs(back.mean_landmark - basis.mean_landmark), 1e-5);
}

TEST(Procrustes, MeanOfSimilarCopiesIsTheShape) {
  Rng rng(20);
  const Landmark68 base = random_landmark(rng);
  std::vector<Landmark68> shapes;
  for (int i = 0; i < 6; ++i) {
    SimilarityTransform<double> t;
    t.scale = 0.5 + rng.uniform();
    t.rotation = random_rotation(rng);
    t.translation = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
    shapes.push_back(apply(t, base));
  }
  const Landmark68 mean = generalized_procrustes_mean(shapes);
  EXPECT_LT(mean.colwise().mean().norm(), 1e-12);
  EXPECT_NEAR(std::sqrt(mean.squaredNorm() / kNumLandmarks), 1.0, 1e-12);
  const auto n = normalize_landmark(base, mean);
  EXPECT_LT(max_abs(n.landmark - mean), 1e-9);
}

}  // namespace
}  // namespace mnet::geometry
