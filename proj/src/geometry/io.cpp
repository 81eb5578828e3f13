#include "marionette/geometry/io.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

namespace mnet::geometry {

LandmarkRecord parse_landmark_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  LandmarkRecord r;
  r.video = j.at("video").get<std::string>();
  r.frame = j.at("frame").get<int>();
  const auto& pts = j.at("points");
  if (!pts.is_array() || pts.size() != kNumLandmarks) {
    throw std::invalid_argument("landmark record: expected 68 points, got " + std::to_string(pts.size()));
  }
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto& p = pts[static_cast<std::size_t>(i)];
    if (!p.is_array() || p.size() != 3) throw std::invalid_argument("landmark record: point " + std::to_string(i) + " is not [x, y, z]");
    for (int c = 0; c < 3; ++c) r.points(i, c) = p[static_cast<std::size_t>(c)].get<double>();
  }
  if (!r.points.allFinite()) throw std::invalid_argument("landmark record: non-finite coordinate");
  return r;
}

std::string format_landmark_record(const LandmarkRecord& record) {
  nlohmann::json pts = nlohmann::json::array();
  for (int i = 0; i < kNumLandmarks; ++i) pts.push_back({record.points(i, 0), record.points(i, 1), record.points(i, 2)});
  return nlohmann::json{{"video", record.video}, {"frame", record.frame}, {"points", std::move(pts)}}.dump();
}

std::vector<LandmarkRecord> read_landmarks_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<LandmarkRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_landmark_record(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_landmarks_jsonl(const std::filesystem::path& path, const std::vector<LandmarkRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << format_landmark_record(r) << '\n';
}

std::vector<std::vector<LandmarkRecord>> group_by_video(const std::vector<LandmarkRecord>& records) {
  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<LandmarkRecord>> out;
  for (const auto& r : records) {
    auto [it, inserted] = slot.try_emplace(r.video, out.size());
    if (inserted) out.emplace_back();
    out[it->second].push_back(r);
  }
  for (auto& v : out) {
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.frame < b.frame; });
  }
  return out;
}

void put_basis(Checkpoint& ckpt, const ExpressionBasis<double>& basis) {
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& gb = basis.groups[static_cast<std::size_t>(g)];
    const std::string prefix = "group_" + std::to_string(g);
    // Row-major storage of the (3 * points) x components matrix.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = gb.basis;
    ckpt.put(prefix + "_basis", Shape{static_cast<int>(rm.rows()), static_cast<int>(rm.cols())},
             std::span<const double>(rm.data(), static_cast<std::size_t>(rm.size())));
    ckpt.put(prefix + "_stddev", Shape{static_cast<int>(gb.stddev.size())},
             std::span<const double>(gb.stddev.data(), static_cast<std::size_t>(gb.stddev.size())));
  }
  const Eigen::Matrix<double, kNumLandmarks, 3, Eigen::RowMajor> mean = basis.mean_landmark;
  ckpt.put("mean_landmark", Shape{kNumLandmarks, 3}, std::span<const double>(mean.data(), static_cast<std::size_t>(mean.size())));
}

ExpressionBasis<double> get_basis(const Checkpoint& ckpt) {
  ExpressionBasis<double> basis;
  const auto& specs = expression_groups();
  for (int g = 0; g < kNumExpressionGroups; ++g) {
    const auto& spec = specs[static_cast<std::size_t>(g)];
    const std::string prefix = "group_" + std::to_string(g);
    const Shape shape = ckpt.shape(prefix + "_basis");
    const int rows = 3 * static_cast<int>(spec.indices.size());
    if (shape != Shape{rows, spec.components}) {
      throw std::runtime_error("basis checkpoint: " + prefix + "_basis has shape " + shape_str(shape) + ", expected [" +
                               std::to_string(rows) + ", " + std::to_string(spec.components) + "]");
    }
    const auto values = ckpt.values(prefix + "_basis");
    Eigen::MatrixXd m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        values.data(), rows, spec.components);
    // Modified Gram-Schmidt keeps column order and orientation.
    for (int j = 0; j < m.cols(); ++j) {
      for (int i = 0; i < j; ++i) m.col(j) -= m.col(i).dot(m.col(j)) * m.col(i);
      m.col(j).normalize();
    }
    const auto sd = ckpt.values(prefix + "_stddev");
    if (static_cast<int>(sd.size()) != spec.components) throw std::runtime_error("basis checkpoint: bad " + prefix + "_stddev");
    auto& gb = basis.groups[static_cast<std::size_t>(g)];
    gb.basis = std::move(m);
    gb.stddev = Eigen::Map<const Eigen::VectorXd>(sd.data(), static_cast<Eigen::Index>(sd.size()));
  }
  const auto mean = ckpt.values("mean_landmark");
  if (mean.size() != static_cast<std::size_t>(3 * kNumLandmarks)) throw std::runtime_error("basis checkpoint: bad mean_landmark");
  basis.mean_landmark = Eigen::Map<const Eigen::Matrix<double, kNumLandmarks, 3, Eigen::RowMajor>>(mean.data());
  return basis;
}

void save_basis(const std::filesystem::path& path, const ExpressionBasis<double>& basis) {
  Checkpoint ckpt;
  put_basis(ckpt, basis);
  ckpt.save(path);
}

ExpressionBasis<double> load_basis(const std::filesystem::path& path) { return get_basis(Checkpoint::load(path)); }

}  // namespace mnet::geometry
