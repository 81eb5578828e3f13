#pragma once

#include <filesystem>
#include <vector>

#include "marionette/core/tensor.hpp"

namespace mnet {

// Planar CHW image. Network-facing images live in [-1, 1]; rasterized
// landmark images and metric inputs live in [0, 1].
struct Image {
  int channels = 3;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool same_shape(const Image& o) const { return channels == o.channels && height == o.height && width == o.width; }
};

// [0,1] <-> [-1,1]
Image to_signed(const Image& unit);
Image to_unit(const Image& signed_image);

// Stacks images into an [N, C, H, W] tensor.
Tensor images_to_tensor(const std::vector<Image>& images);
Tensor image_to_tensor(const Image& image);
Image tensor_to_image(const Tensor& t, int index = 0);

// 8-bit binary PPM (P6) / PGM (P5). Values are clamped to [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& unit_image);
Image read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& unit_gray);

}  // namespace mnet
