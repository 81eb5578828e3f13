#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "marionette/geometry/landmarks.hpp"
#include "marionette/image.hpp"

namespace mnet::synth {

using geometry::Landmark68;
using geometry::kNumExpressionGroups;

// Procedural 3-D face layout in the 68-point convention (x right, y down,
// z toward the camera), centered with unit RMS radius.
Landmark68 canonical_template();

// Ground-truth generative expression modes, one block per PCA group.
struct ExpressionModes {
  std::array<Eigen::MatrixXd, kNumExpressionGroups> modes;   // (3 * points) x components, orthonormal
  std::array<Eigen::VectorXd, kNumExpressionGroups> stddev;  // per-mode amplitude, descending

  // sum_k alpha_k * stddev_k * mode_k, scattered into a full landmark.
  Landmark68 offset(const geometry::ExpressionCoeffs<double>& alpha) const;
};

// Smooth (low-frequency over point index) modes, orthogonal within each group
// and to the similarity tangent space of `templ` restricted to the group, so
// that landmark normalization leaves them untouched to first order.
ExpressionModes make_expression_modes(std::uint64_t seed, const Landmark68& templ = canonical_template());

struct SynthConfig {
  int identities = 10;
  int clips_per_identity = 2;
  int frames_per_clip = 20;
  int image_size = 32;
  std::uint64_t seed = 1;
  double identity_scale = 0.04;  // RMS per-point identity deviation, template units
  double smoothing = 0.7;        // AR(1) factor of the expression coefficients
  double max_pose_deg = 45.0;
  bool pose = true;
  bool expression = true;

  void validate() const;
};

struct SyntheticIdentity {
  int label = 0;
  Landmark68 offset = Landmark68::Zero();
  std::uint64_t appearance_seed = 0;
  std::array<double, 3> face_color{}, background_a{}, background_b{};
};

struct FramePose {
  double yaw = 0.0, pitch = 0.0, roll = 0.0;  // degrees
  double scale = 1.0;                          // pixels per template unit
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  geometry::SimilarityTransform<double> transform() const;
};

struct SyntheticClip {
  std::string name;
  int identity = 0;
  std::vector<geometry::ExpressionCoeffs<double>> alpha;  // ground truth, per frame
  std::vector<FramePose> pose;
  std::vector<Landmark68> canonical;  // template + identity + expression, before pose
  std::vector<Landmark68> landmarks;  // posed, pixel units

  int frames() const { return static_cast<int>(landmarks.size()); }
};

struct Corpus {
  SynthConfig config;
  Landmark68 templ;
  ExpressionModes modes;
  std::vector<SyntheticIdentity> identities;
  std::vector<SyntheticClip> clips;

  // 3 x h x w in [-1, 1].
  Image render(int clip, int frame) const;
  std::vector<std::vector<Landmark68>> landmark_videos() const;
};

// Even-indexed identities carry +delta, their odd partners -delta, so the
// offsets cancel over each pair.
Corpus generate_corpus(const SynthConfig& config);

// Background gradient, filled face hull and the landmark raster, composited.
Image render_face(const Landmark68& landmark, const SyntheticIdentity& identity, int size);

struct CorpusSplit {
  std::vector<int> train;  // identity labels, ascending
  std::vector<int> held_out;
};

CorpusSplit corpus_split(const Corpus& corpus, double train_fraction, std::uint64_t seed);

// Clip indices whose coefficient sample mean exceeds 3 / sqrt(frames) in some
// dimension.
std::vector<int> flag_expression_means(const Corpus& corpus);

// landmarks.jsonl + frames/<clip>_<frame>.ppm + manifest.json.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
// Regenerates from the manifest and checks the stored landmarks against it.
Corpus load_corpus(const std::filesystem::path& dir);

SynthConfig config_from_json(const std::string& text);
std::string config_to_json(const SynthConfig& config);

}  // namespace mnet::synth
