#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "marionette/core/checkpoint.hpp"
#include "marionette/geometry/landmarks.hpp"

namespace mnet::geometry {

struct LandmarkRecord {
  std::string video;
  int frame = 0;
  Landmark68 points = Landmark68::Zero();
};

// One JSON object per line: {"video": str, "frame": int, "points": [[x,y,z] x 68]}.
std::vector<LandmarkRecord> read_landmarks_jsonl(const std::filesystem::path& path);
void write_landmarks_jsonl(const std::filesystem::path& path, const std::vector<LandmarkRecord>& records);
LandmarkRecord parse_landmark_record(const std::string& line);
std::string format_landmark_record(const LandmarkRecord& record);

// Groups records by video (first-appearance order), frames sorted by index.
std::vector<std::vector<LandmarkRecord>> group_by_video(const std::vector<LandmarkRecord>& records);

// Tensors "group_{i}_basis", "group_{i}_stddev", "mean_landmark".
void put_basis(Checkpoint& ckpt, const ExpressionBasis<double>& basis);
// Columns are re-orthonormalized after the 32-bit round trip.
ExpressionBasis<double> get_basis(const Checkpoint& ckpt);
void save_basis(const std::filesystem::path& path, const ExpressionBasis<double>& basis);
ExpressionBasis<double> load_basis(const std::filesystem::path& path);

}  // namespace mnet::geometry
