#include "marionette/geometry/raster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdlib>
#include <optional>

namespace mnet::geometry {

namespace {

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

// Liang-Barsky against [0, w-1] x [0, h-1].
std::optional<Segment> clip(Segment s, int width, int height) {
  const Eigen::Vector2d d = s.b - s.a;
  double t0 = 0.0;
  double t1 = 1.0;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {s.a.x(), width - 1 - s.a.x(), s.a.y(), height - 1 - s.a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return std::nullopt;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, r);
    } else {
      t1 = std::min(t1, r);
    }
    if (t0 > t1) return std::nullopt;
  }
  return Segment{s.a + t0 * d, s.a + t1 * d};
}

void put_pixel(Image& image, int x, int y, const std::array<double, 3>& color) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  for (int c = 0; c < 3; ++c) image.at(c, y, x) = color[static_cast<std::size_t>(c)];
}

void bresenham(Image& image, int x0, int y0, int x1, int y1, const std::array<double, 3>& color) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    put_pixel(image, x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_segment(Image& image, const Eigen::Vector2d& a, const Eigen::Vector2d& b, const std::array<double, 3>& color) {
  const auto s = clip({a, b}, image.width, image.height);
  if (!s) return;
  bresenham(image, static_cast<int>(std::lround(s->a.x())), static_cast<int>(std::lround(s->a.y())),
            static_cast<int>(std::lround(s->b.x())), static_cast<int>(std::lround(s->b.y())), color);
}

}  // namespace

void draw_polyline(Image& image, std::span<const Eigen::Vector2d> points, bool closed, const std::array<double, 3>& color) {
  if (points.empty()) return;
  if (points.size() == 1) {
    draw_segment(image, points[0], points[0], color);
    return;
  }
  for (std::size_t i = 0; i + 1 < points.size(); ++i) draw_segment(image, points[i], points[i + 1], color);
  if (closed && points.size() > 2) draw_segment(image, points.back(), points.front(), color);
}

Image rasterize(const Landmark68& l, int height, int width) {
  if (height < kMinRasterSize || width < kMinRasterSize) {
    throw std::invalid_argument("rasterize: canvas must be at least 32x32, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  if (!l.allFinite()) throw std::invalid_argument("rasterize: landmark contains non-finite coordinates");
  Image image(3, height, width, 0.0);
  for (const auto& group : draw_groups()) {
    std::vector<Eigen::Vector2d> pts;
    pts.reserve(group.indices.size());
    for (int i : group.indices) pts.emplace_back(l(i, 0), l(i, 1));
    draw_polyline(image, pts, group.closed, group.color);
  }
  return image;
}

std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points) {
  std::sort(points.begin(), points.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) return points;
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Eigen::Vector2d> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto& p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (std::size_t i = points.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0) --k;
    hull[k++] = points[i];
  }
  hull.resize(k - 1);
  return hull;
}

Image fill_convex_polygon(std::span<const Eigen::Vector2d> hull, int height, int width) {
  Image mask(1, height, width, 0.0);
  if (hull.size() < 3) return mask;
  for (int y = 0; y < height; ++y) {
    const double cy = y;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const Eigen::Vector2d& a = hull[i];
      const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
      if ((cy < std::min(a.y(), b.y())) || (cy > std::max(a.y(), b.y()))) continue;
      if (a.y() == b.y()) {
        lo = std::min({lo, a.x(), b.x()});
        hi = std::max({hi, a.x(), b.x()});
        continue;
      }
      const double x = a.x() + (cy - a.y()) * (b.x() - a.x()) / (b.y() - a.y());
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    if (!(lo <= hi)) continue;
    const int x0 = std::max(0, static_cast<int>(std::ceil(lo)));
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(hi)));
    for (int x = x0; x <= x1; ++x) mask.at(0, y, x) = 1.0;
  }
  return mask;
}

Image face_mask(const Landmark68& l, int height, int width) {
  if (!l.allFinite()) throw std::invalid_argument("face_mask: landmark contains non-finite coordinates");
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(kNumLandmarks);
  for (int i = 0; i < kNumLandmarks; ++i) pts.emplace_back(l(i, 0), l(i, 1));
  const auto hull = convex_hull(std::move(pts));
  return fill_convex_polygon(hull, height, width);
}

}  // namespace mnet::geometry
