#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "marionette/geometry/landmarks.hpp"
#include "marionette/image.hpp"

namespace mnet::eval {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrCap = 100.0;
inline constexpr double kPsnrMseFloor = 1e-10;

// Normalized 11x11 Gaussian, row-major.
std::vector<double> ssim_window();

// Per-window SSIM over every placement that fits inside the image, averaged
// over channels. Entry (i, j) belongs to the window centered at pixel
// (i + 5, j + 5). Images in [0, 1].
struct SsimMap {
  int height = 0;
  int width = 0;
  int offset = kSsimWindow / 2;
  std::vector<double> values;

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * width + j]; }
};
SsimMap ssim_map(const Image& a, const Image& b);

double ssim(const Image& a, const Image& b);
// 10 log10(1 / MSE), or kPsnrCap when MSE < kPsnrMseFloor.
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);

struct MaskedMetrics {
  double ssim = 0.0;
  double psnr = 0.0;
};

// mask: 1 x h x w, a pixel counts when its value is > 0.5. PSNR over masked
// pixels of every channel; SSIM averaged over the windows whose center is
// masked. Throws on an empty mask or when no window center is masked.
MaskedMetrics masked_metrics(const Image& a, const Image& b, const Image& mask);

// sqrt(mean over frames of |(yaw, pitch, roll) difference|^2), degrees, each
// angle difference wrapped to (-180, 180].
double prmse(std::span<const geometry::Landmark68> driver, std::span<const geometry::Landmark68> generated,
             const geometry::Landmark68& templ);
double pose_error(const geometry::PoseAngles& a, const geometry::PoseAngles& b);

struct FrameMetrics {
  std::string frame;
  double ssim = 0, psnr = 0, m_ssim = 0, m_psnr = 0, pose_error = 0;
};

struct MetricReport {
  std::vector<FrameMetrics> frames;
  FrameMetrics mean;  // averages; pose column holds PRMSE
};

// reference/generated frames in [0, 1]; masks from the reference landmarks.
MetricReport evaluate_frames(std::span<const Image> reference, std::span<const Image> generated,
                             std::span<const geometry::Landmark68> reference_landmarks,
                             std::span<const geometry::Landmark68> generated_landmarks,
                             const geometry::Landmark68& templ);

// Header frame,ssim,psnr,m_ssim,m_psnr,pose_error_deg; one row per frame and a
// final "mean" row. Fixed 10-decimal formatting.
std::string format_report_csv(const MetricReport& report);

}  // namespace mnet::eval
