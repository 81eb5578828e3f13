#include "marionette/eval/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "marionette/geometry/raster.hpp"

namespace mnet::eval {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": image shapes differ (" + std::to_string(a.channels) + "x" +
                                std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                                std::to_string(b.channels) + "x" + std::to_string(b.height) + "x" +
                                std::to_string(b.width) + ")");
  }
}

double wrap_degrees(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

}  // namespace

std::vector<double> ssim_window() {
  std::vector<double> w(static_cast<std::size_t>(kSsimWindow * kSsimWindow));
  const int r = kSsimWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    for (int j = 0; j < kSsimWindow; ++j) {
      const double d2 = (i - r) * (i - r) + (j - r) * (j - r);
      total += w[static_cast<std::size_t>(i * kSsimWindow + j)] = std::exp(-d2 / (2.0 * kSsimSigma * kSsimSigma));
    }
  }
  for (double& v : w) v /= total;
  return w;
}

SsimMap ssim_map(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  if (a.height < kSsimWindow || a.width < kSsimWindow) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  const auto win = ssim_window();
  SsimMap map;
  map.height = a.height - kSsimWindow + 1;
  map.width = a.width - kSsimWindow + 1;
  map.values.assign(static_cast<std::size_t>(map.height) * map.width, 0.0);
  for (int c = 0; c < a.channels; ++c) {
    for (int i = 0; i < map.height; ++i) {
      for (int j = 0; j < map.width; ++j) {
        double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
        for (int u = 0; u < kSsimWindow; ++u) {
          for (int v = 0; v < kSsimWindow; ++v) {
            const double wt = win[static_cast<std::size_t>(u * kSsimWindow + v)];
            const double x = a.at(c, i + u, j + v);
            const double y = b.at(c, i + u, j + v);
            mu_a += wt * x;
            mu_b += wt * y;
            aa += wt * x * x;
            bb += wt * y * y;
            ab += wt * x * y;
          }
        }
        const double var_a = aa - mu_a * mu_a;
        const double var_b = bb - mu_b * mu_b;
        const double cov = ab - mu_a * mu_b;
        const double s = ((2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2)) /
                         ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
        map.values[static_cast<std::size_t>(i) * map.width + j] += s;
      }
    }
  }
  for (double& v : map.values) v /= a.channels;
  return map;
}

double ssim(const Image& a, const Image& b) {
  const SsimMap m = ssim_map(a, b);
  double total = 0.0;
  for (double v : m.values) total += v;
  return total / static_cast<double>(m.values.size());
}

double psnr_from_mse(double mse) { return mse < kPsnrMseFloor ? kPsnrCap : 10.0 * std::log10(1.0 / mse); }

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  double total = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) total += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return psnr_from_mse(total / static_cast<double>(a.data.size()));
}

MaskedMetrics masked_metrics(const Image& a, const Image& b, const Image& mask) {
  require_same(a, b, "masked_metrics");
  if (mask.channels != 1 || mask.height != a.height || mask.width != a.width) {
    throw std::invalid_argument("masked_metrics: mask must be 1 x " + std::to_string(a.height) + " x " + std::to_string(a.width));
  }
  double total = 0.0;
  std::size_t count = 0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      if (mask.at(0, y, x) <= 0.5) continue;
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(c, y, x) - b.at(c, y, x);
        total += d * d;
        ++count;
      }
    }
  }
  if (count == 0) throw std::invalid_argument("masked_metrics: empty mask");
  MaskedMetrics out;
  out.psnr = psnr_from_mse(total / static_cast<double>(count));

  const SsimMap m = ssim_map(a, b);
  double s = 0.0;
  std::size_t windows = 0;
  for (int i = 0; i < m.height; ++i) {
    for (int j = 0; j < m.width; ++j) {
      if (mask.at(0, i + m.offset, j + m.offset) <= 0.5) continue;
      s += m.at(i, j);
      ++windows;
    }
  }
  if (windows == 0) throw std::invalid_argument("masked_metrics: no SSIM window is centered inside the mask");
  out.ssim = s / static_cast<double>(windows);
  return out;
}

double pose_error(const geometry::PoseAngles& a, const geometry::PoseAngles& b) {
  const double dy = wrap_degrees(a.yaw - b.yaw);
  const double dp = wrap_degrees(a.pitch - b.pitch);
  const double dr = wrap_degrees(a.roll - b.roll);
  return std::sqrt(dy * dy + dp * dp + dr * dr);
}

double prmse(std::span<const geometry::Landmark68> driver, std::span<const geometry::Landmark68> generated,
             const geometry::Landmark68& templ) {
  if (driver.size() != generated.size()) {
    throw std::invalid_argument("prmse: " + std::to_string(driver.size()) + " driver frames vs " +
                                std::to_string(generated.size()) + " generated frames");
  }
  if (driver.empty()) throw std::invalid_argument("prmse: no frames");
  double total = 0.0;
  for (std::size_t i = 0; i < driver.size(); ++i) {
    const double e = pose_error(geometry::head_pose_angles(driver[i], templ), geometry::head_pose_angles(generated[i], templ));
    total += e * e;
  }
  return std::sqrt(total / static_cast<double>(driver.size()));
}

MetricReport evaluate_frames(std::span<const Image> reference, std::span<const Image> generated,
                             std::span<const geometry::Landmark68> reference_landmarks,
                             std::span<const geometry::Landmark68> generated_landmarks,
                             const geometry::Landmark68& templ) {
  if (reference.size() != generated.size() || reference.size() != reference_landmarks.size() ||
      reference.size() != generated_landmarks.size()) {
    throw std::invalid_argument("evaluate_frames: frame and landmark counts differ");
  }
  if (reference.empty()) throw std::invalid_argument("evaluate_frames: no frames");
  MetricReport report;
  const double n = static_cast<double>(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    char name[24];
    std::snprintf(name, sizeof name, "%03zu", i);
    FrameMetrics f;
    f.frame = name;
    f.ssim = ssim(reference[i], generated[i]);
    f.psnr = psnr(reference[i], generated[i]);
    const Image mask = geometry::face_mask(reference_landmarks[i], reference[i].height, reference[i].width);
    const MaskedMetrics m = masked_metrics(reference[i], generated[i], mask);
    f.m_ssim = m.ssim;
    f.m_psnr = m.psnr;
    f.pose_error = pose_error(geometry::head_pose_angles(reference_landmarks[i], templ),
                              geometry::head_pose_angles(generated_landmarks[i], templ));
    report.mean.ssim += f.ssim / n;
    report.mean.psnr += f.psnr / n;
    report.mean.m_ssim += f.m_ssim / n;
    report.mean.m_psnr += f.m_psnr / n;
    report.frames.push_back(f);
  }
  report.mean.frame = "mean";
  report.mean.pose_error = prmse(reference_landmarks, generated_landmarks, templ);
  return report;
}

std::string format_report_csv(const MetricReport& report) {
  std::string out = "frame,ssim,psnr,m_ssim,m_psnr,pose_error_deg\n";
  auto row = [&out](const FrameMetrics& f) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%.10f,%.10f,%.10f,%.10f,%.10f\n", f.frame.c_str(), f.ssim, f.psnr, f.m_ssim,
                  f.m_psnr, f.pose_error);
    out += buf;
  };
  for (const auto& f : report.frames) row(f);
  row(report.mean);
  return out;
}

}  // namespace mnet::eval
