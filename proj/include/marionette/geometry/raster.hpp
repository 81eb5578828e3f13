#pragma once

#include <vector>

#include "marionette/geometry/landmarks.hpp"
#include "marionette/image.hpp"

namespace mnet::geometry {

inline constexpr int kMinRasterSize = 32;

// Orthographic projection onto the image plane (x right, y down, pixel units)
// and 1-pixel polylines per draw group. Output is 3 x h x w in [0, 1].
Image rasterize(const Landmark68& l, int height, int width);

// Draws a single polyline; exposed for tests and the face-mask code.
void draw_polyline(Image& image, std::span<const Eigen::Vector2d> points, bool closed, const std::array<double, 3>& color);

// Andrew's monotone chain; counter-clockwise in image coordinates, collinear
// points dropped.
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> points);

// 1 x h x w binary map of the pixels whose centers lie inside (or on) the
// convex polygon, filled row by row.
Image fill_convex_polygon(std::span<const Eigen::Vector2d> hull, int height, int width);

// Filled convex hull of the projected landmark.
Image face_mask(const Landmark68& l, int height, int width);

}  // namespace mnet::geometry
