#include "marionette/synth/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include "marionette/core/rng.hpp"
#include "marionette/geometry/io.hpp"
#include "marionette/geometry/raster.hpp"

namespace mnet::synth {

using geometry::expression_groups;
using geometry::ExpressionCoeffs;

namespace {

constexpr double kPi = std::numbers::pi;

void put(Landmark68& l, int i, double x, double y, double z) { l.row(i) << x, y, z; }

void ellipse(Landmark68& l, std::span<const int> idx, double cx, double cy, double rx, double ry, double z,
             double start) {
  // Points run clockwise on screen (y down) starting at angle `start`.
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double t = start + 2.0 * kPi * static_cast<double>(k) / static_cast<double>(idx.size());
    put(l, idx[k], cx + rx * std::cos(t), cy + ry * std::sin(t), z);
  }
}

// Orthonormal basis of the column span, rank decided relative to the largest
// singular value.
Eigen::MatrixXd span_basis(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  const auto& s = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < s.size() && s[rank] > 1e-10 * s[0]) ++rank;
  return svd.matrixU().leftCols(rank);
}

Eigen::MatrixXd similarity_tangent(const Landmark68& templ, std::span<const int> idx) {
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(3 * n, 7);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Vector3d p = templ.row(idx[static_cast<std::size_t>(k)]).transpose();
    for (int a = 0; a < 3; ++a) {
      t(3 * k + a, a) = 1.0;
      t.block<3, 1>(3 * k, 3 + a) = Eigen::Vector3d::Unit(a).cross(p);
    }
    t.block<3, 1>(3 * k, 6) = p;
  }
  return span_basis(t);
}

std::array<double, 3> palette_color(Rng& rng) {
  return {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
}

double ar1(double previous, double rho, Rng& rng) { return rho * previous + std::sqrt(1.0 - rho * rho) * rng.normal(); }

std::string clip_name(int identity, int clip) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "id%03d_clip%02d", identity, clip);
  return buf;
}

std::string frame_file(const std::string& clip, int frame) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "_%03d.ppm", frame);
  return clip + buf;
}

}  // namespace

Landmark68 canonical_template() {
  Landmark68 l = Landmark68::Zero();
  for (int i = 0; i <= 16; ++i) {
    const double t = kPi * i / 16.0;
    put(l, i, -0.95 * std::cos(t), 0.05 + 0.9 * std::sin(t), -0.45 * std::abs(std::cos(t)));
  }
  for (int i = 0; i < 5; ++i) {
    const double u = i / 4.0;
    const double arch = 0.08 * std::sin(kPi * u);
    put(l, 17 + i, -0.75 + 0.55 * u, -0.45 - arch, 0.15);
    put(l, 22 + i, 0.2 + 0.55 * u, -0.45 - arch, 0.15);
  }
  for (int i = 0; i < 4; ++i) put(l, 27 + i, 0.0, -0.3 + 0.13 * i, 0.25 + 0.1 * i);
  for (int i = 0; i < 5; ++i) put(l, 31 + i, -0.18 + 0.09 * i, 0.2 + 0.03 * (1.0 - std::abs(i - 2) / 2.0), 0.3);
  const int right_eye[] = {36, 37, 38, 39, 40, 41};
  const int left_eye[] = {42, 43, 44, 45, 46, 47};
  ellipse(l, right_eye, -0.42, -0.28, 0.15, 0.06, 0.15, kPi);
  ellipse(l, left_eye, 0.42, -0.28, 0.15, 0.06, 0.15, kPi);
  std::array<int, 12> outer{};
  std::array<int, 8> inner{};
  for (int i = 0; i < 12; ++i) outer[static_cast<std::size_t>(i)] = 48 + i;
  for (int i = 0; i < 8; ++i) inner[static_cast<std::size_t>(i)] = 60 + i;
  ellipse(l, outer, 0.0, 0.5, 0.38, 0.15, 0.2, kPi);
  ellipse(l, inner, 0.0, 0.5, 0.28, 0.06, 0.2, kPi);

  l.rowwise() -= l.colwise().mean();
  return l / std::sqrt(l.squaredNorm() / geometry::kNumLandmarks);
}

Landmark68 ExpressionModes::offset(const ExpressionCoeffs<double>& alpha) const {
  Landmark68 out = Landmark68::Zero();
  int at = 0;
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& m = modes[static_cast<std::size_t>(g)];
    const auto k = m.cols();
    const Eigen::VectorXd coeff = alpha.segment(at, k).cwiseProduct(stddev[static_cast<std::size_t>(g)]);
    geometry::scatter_group(out, std::span<const int>(expression_groups()[static_cast<std::size_t>(g)].indices),
                            Eigen::VectorXd(m * coeff));
    at += static_cast<int>(k);
  }
  return out;
}

ExpressionModes make_expression_modes(std::uint64_t seed, const Landmark68& templ) {
  ExpressionModes out;
  Rng root = Rng(seed).split(0x30de);
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& spec = expression_groups()[static_cast<std::size_t>(g)];
    const std::span<const int> idx(spec.indices);
    const auto n = static_cast<Eigen::Index>(idx.size());
    const int k = spec.components;
    // Smoothest directions (first differences along the point chain) of the
    // complement of the similarity tangent space.
    const Eigen::MatrixXd tangent = similarity_tangent(templ, idx);
    Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(3 * (n - 1), 3 * n);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        diff(3 * i + a, 3 * i + a) = -1.0;
        diff(3 * i + a, 3 * (i + 1) + a) = 1.0;
      }
    }
    Eigen::MatrixXd free = Eigen::MatrixXd::Identity(3 * n, 3 * n) - tangent * tangent.transpose();
    free = span_basis(free);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(free.transpose() * diff.transpose() * diff * free);
    const Eigen::Index pool = std::min<Eigen::Index>(free.cols(), k + (k + 1) / 2);
    if (pool < k) throw std::logic_error("make_expression_modes: too few free directions in " + std::string(spec.name));
    const Eigen::MatrixXd smooth = free * eig.eigenvectors().leftCols(pool);  // ascending roughness

    Rng rng = root.split(static_cast<std::uint64_t>(g));
    Eigen::MatrixXd mix(pool, k);
    for (Eigen::Index i = 0; i < pool; ++i)
      for (Eigen::Index j = 0; j < k; ++j) mix(i, j) = rng.normal() / (1.0 + static_cast<double>(i));
    Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(smooth * mix).householderQ() *
                        Eigen::MatrixXd::Identity(3 * n, k);
    // One more pass against the tangent space to mop up roundoff.
    q -= tangent * (tangent.transpose() * q);
    out.modes[static_cast<std::size_t>(g)] = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() *
                                             Eigen::MatrixXd::Identity(3 * n, k);

    Eigen::MatrixXd pts(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) pts.row(i) = templ.row(idx[static_cast<std::size_t>(i)]);
    pts.rowwise() -= pts.colwise().mean();
    const double radius = std::sqrt(pts.squaredNorm() / static_cast<double>(n));
    // Per-point RMS displacement of the leading mode at one standard deviation.
    const double amplitude = std::min(0.25 * radius, 0.06);
    Eigen::VectorXd sd(k);
    for (int j = 0; j < k; ++j) sd[j] = amplitude * std::sqrt(static_cast<double>(n)) * (1.0 - 0.5 * j / k);
    out.stddev[static_cast<std::size_t>(g)] = sd;
  }
  return out;
}

void SynthConfig::validate() const {
  if (identities < 1 || clips_per_identity < 1 || frames_per_clip < 1) {
    throw std::invalid_argument("synth: identity, clip and frame counts must be >= 1");
  }
  if (image_size < geometry::kMinRasterSize) {
    throw std::invalid_argument("synth: image_size must be >= " + std::to_string(geometry::kMinRasterSize));
  }
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw std::invalid_argument("synth: smoothing must be in [0, 1)");
  if (!(identity_scale >= 0.0)) throw std::invalid_argument("synth: identity_scale must be >= 0");
  if (!(max_pose_deg >= 0.0 && max_pose_deg < 89.0)) throw std::invalid_argument("synth: max_pose_deg must be in [0, 89)");
}

geometry::SimilarityTransform<double> FramePose::transform() const {
  geometry::SimilarityTransform<double> t;
  t.scale = scale;
  t.rotation = geometry::angles_to_rotation<double>(yaw, pitch, roll);
  t.translation = translation;
  return t;
}

Image render_face(const Landmark68& landmark, const SyntheticIdentity& identity, int size) {
  Image img(3, size, size);
  const double denom = 2.0 * (size - 1);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = (x + y) / denom;
      for (int c = 0; c < 3; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        img.at(c, y, x) = (1.0 - t) * identity.background_a[cc] + t * identity.background_b[cc];
      }
    }
  }
  const Image mask = geometry::face_mask(landmark, size, size);
  const Image lines = geometry::rasterize(landmark, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const bool drawn = lines.at(0, y, x) + lines.at(1, y, x) + lines.at(2, y, x) > 0.0;
      for (int c = 0; c < 3; ++c) {
        if (drawn) {
          img.at(c, y, x) = lines.at(c, y, x);
        } else if (mask.at(0, y, x) > 0.0) {
          img.at(c, y, x) = identity.face_color[static_cast<std::size_t>(c)];
        }
      }
    }
  }
  return to_signed(img);
}

Image Corpus::render(int clip, int frame) const {
  const auto& c = clips.at(static_cast<std::size_t>(clip));
  return render_face(c.landmarks.at(static_cast<std::size_t>(frame)), identities.at(static_cast<std::size_t>(c.identity)),
                     config.image_size);
}

std::vector<std::vector<Landmark68>> Corpus::landmark_videos() const {
  std::vector<std::vector<Landmark68>> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(c.landmarks);
  return out;
}

Corpus generate_corpus(const SynthConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  corpus.templ = canonical_template();
  corpus.modes = make_expression_modes(config.seed, corpus.templ);
  const Rng root(config.seed);

  // Identity deviations: smooth fields over the point index, fixed covariance.
  constexpr int kIdentityFreqs = 6;
  const double field_norm = std::sqrt(2.0 / kIdentityFreqs);
  for (int i = 0; i < config.identities; ++i) {
    SyntheticIdentity id;
    id.label = i;
    if (i % 2 == 1) {
      id.offset = -corpus.identities.back().offset;
    } else {
      Rng rng = root.split(0x1d).split(static_cast<std::uint64_t>(i));
      Eigen::Matrix<double, kIdentityFreqs, 3> z;
      for (int f = 0; f < kIdentityFreqs; ++f)
        for (int a = 0; a < 3; ++a) z(f, a) = rng.normal();
      for (int p = 0; p < geometry::kNumLandmarks; ++p) {
        for (int f = 0; f < kIdentityFreqs; ++f) {
          const double c = std::cos(kPi * f * (p + 0.5) / geometry::kNumLandmarks);
          id.offset.row(p) += config.identity_scale * field_norm * c * z.row(f) / std::sqrt(3.0);
        }
      }
    }
    id.appearance_seed = splitmix64(config.seed ^ splitmix64(0xa99ea7a9ce + static_cast<std::uint64_t>(i)));
    Rng paint(id.appearance_seed);
    id.face_color = palette_color(paint);
    id.background_a = palette_color(paint);
    id.background_b = palette_color(paint);
    corpus.identities.push_back(id);
  }

  const double center = 0.5 * (config.image_size - 1);
  const double rho = config.smoothing;
  for (int i = 0; i < config.identities; ++i) {
    for (int c = 0; c < config.clips_per_identity; ++c) {
      Rng rng = root.split(0xc11b).split(static_cast<std::uint64_t>(i)).split(static_cast<std::uint64_t>(c));
      SyntheticClip clip;
      clip.name = clip_name(i, c);
      clip.identity = i;

      FramePose base;
      base.scale = 0.3 * config.image_size;
      base.translation = Eigen::Vector3d(center, center, 0.0);
      double yaw0 = 0, pitch0 = 0, roll0 = 0;
      if (config.pose) {
        const double m = config.max_pose_deg;
        yaw0 = rng.uniform(-0.5 * m, 0.5 * m);
        pitch0 = rng.uniform(-m / 3.0, m / 3.0);
        roll0 = rng.uniform(-m / 3.0, m / 3.0);
        base.scale *= rng.uniform(0.9, 1.1);
        base.translation.x() += rng.uniform(-0.05, 0.05) * config.image_size;
        base.translation.y() += rng.uniform(-0.05, 0.05) * config.image_size;
      }

      ExpressionCoeffs<double> a = ExpressionCoeffs<double>::Zero();
      Eigen::Vector3d jitter = Eigen::Vector3d::Zero();
      for (int t = 0; t < config.frames_per_clip; ++t) {
        if (config.expression) {
          for (int k = 0; k < geometry::kExpressionDim; ++k) a[k] = t == 0 ? rng.normal() : ar1(a[k], rho, rng);
        }
        FramePose pose = base;
        if (config.pose) {
          for (int k = 0; k < 3; ++k) jitter[k] = t == 0 ? 0.0 : ar1(jitter[k] / 8.0, rho, rng) * 8.0;
          const double m = config.max_pose_deg;
          pose.yaw = std::clamp(yaw0 + jitter[0], -m, m);
          pose.pitch = std::clamp(pitch0 + jitter[1], -m, m);
          pose.roll = std::clamp(roll0 + jitter[2], -m, m);
        }
        const Landmark68 canon =
            corpus.templ + corpus.identities[static_cast<std::size_t>(i)].offset + corpus.modes.offset(a);
        clip.alpha.push_back(a);
        clip.pose.push_back(pose);
        clip.canonical.push_back(canon);
        clip.landmarks.push_back(geometry::apply(pose.transform(), canon));
      }
      corpus.clips.push_back(std::move(clip));
    }
  }
  return corpus;
}

CorpusSplit corpus_split(const Corpus& corpus, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("corpus_split: train fraction must be in (0, 1), got " + std::to_string(train_fraction));
  }
  const int n = static_cast<int>(corpus.identities.size());
  if (n < 2) throw std::invalid_argument("corpus_split: need at least 2 identities");
  std::vector<int> labels;
  for (const auto& id : corpus.identities) labels.push_back(id.label);
  Rng rng = Rng(seed).split(0x5b17);
  rng.shuffle(labels);
  const int n_train = std::clamp(static_cast<int>(std::lround(train_fraction * n)), 1, n - 1);
  CorpusSplit split;
  split.train.assign(labels.begin(), labels.begin() + n_train);
  split.held_out.assign(labels.begin() + n_train, labels.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.held_out.begin(), split.held_out.end());
  return split;
}

std::vector<int> flag_expression_means(const Corpus& corpus) {
  std::vector<int> flagged;
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    const auto& clip = corpus.clips[c];
    ExpressionCoeffs<double> mean = ExpressionCoeffs<double>::Zero();
    for (const auto& a : clip.alpha) mean += a;
    mean /= static_cast<double>(clip.alpha.size());
    if (mean.cwiseAbs().maxCoeff() > 3.0 / std::sqrt(static_cast<double>(clip.alpha.size()))) {
      flagged.push_back(static_cast<int>(c));
    }
  }
  return flagged;
}

std::string config_to_json(const SynthConfig& c) {
  nlohmann::json j = {{"identities", c.identities},
                      {"clips_per_identity", c.clips_per_identity},
                      {"frames_per_clip", c.frames_per_clip},
                      {"image_size", c.image_size},
                      {"seed", c.seed},
                      {"identity_scale", c.identity_scale},
                      {"smoothing", c.smoothing},
                      {"max_pose_deg", c.max_pose_deg},
                      {"pose", c.pose},
                      {"expression", c.expression}};
  return j.dump(2);
}

SynthConfig config_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SynthConfig c;
  c.identities = j.at("identities").get<int>();
  c.clips_per_identity = j.at("clips_per_identity").get<int>();
  c.frames_per_clip = j.at("frames_per_clip").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.identity_scale = j.at("identity_scale").get<double>();
  c.smoothing = j.at("smoothing").get<double>();
  c.max_pose_deg = j.at("max_pose_deg").get<double>();
  c.pose = j.at("pose").get<bool>();
  c.expression = j.at("expression").get<bool>();
  c.validate();
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  std::vector<geometry::LandmarkRecord> records;
  nlohmann::json clips = nlohmann::json::array();
  for (std::size_t c = 0; c < corpus.clips.size(); ++c) {
    const auto& clip = corpus.clips[c];
    nlohmann::json files = nlohmann::json::array();
    for (int t = 0; t < clip.frames(); ++t) {
      records.push_back({clip.name, t, clip.landmarks[static_cast<std::size_t>(t)]});
      const std::string file = frame_file(clip.name, t);
      write_ppm(dir / "frames" / file, to_unit(corpus.render(static_cast<int>(c), t)));
      files.push_back("frames/" + file);
    }
    clips.push_back({{"name", clip.name}, {"identity", clip.identity}, {"frames", clip.frames()}, {"files", files}});
  }
  geometry::write_landmarks_jsonl(dir / "landmarks.jsonl", records);

  nlohmann::json ids = nlohmann::json::array();
  for (const auto& id : corpus.identities) {
    ids.push_back({{"label", id.label}, {"appearance_seed", id.appearance_seed}});
  }
  nlohmann::json manifest = {{"format", "marionette-synth-1"},
                             {"config", nlohmann::json::parse(config_to_json(corpus.config))},
                             {"landmarks", "landmarks.jsonl"},
                             {"identities", ids},
                             {"clips", clips}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto manifest = nlohmann::json::parse(buf.str());
  Corpus corpus = generate_corpus(config_from_json(manifest.at("config").dump()));

  const auto records = geometry::read_landmarks_jsonl(dir / manifest.at("landmarks").get<std::string>());
  std::size_t expected = 0;
  for (const auto& c : corpus.clips) expected += c.landmarks.size();
  if (records.size() != expected) {
    throw std::runtime_error("corpus at " + dir.string() + ": " + std::to_string(records.size()) +
                             " landmark records, manifest implies " + std::to_string(expected));
  }
  std::size_t r = 0;
  for (const auto& c : corpus.clips) {
    for (int t = 0; t < c.frames(); ++t, ++r) {
      const auto& rec = records[r];
      if (rec.video != c.name || rec.frame != t || rec.points != c.landmarks[static_cast<std::size_t>(t)]) {
        throw std::runtime_error("corpus at " + dir.string() + ": landmark record " + std::to_string(r) +
                                 " does not match the manifest's generator settings");
      }
    }
  }
  return corpus;
}

}  // namespace mnet::synth
