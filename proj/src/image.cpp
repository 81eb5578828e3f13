#include "marionette/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace mnet {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

int read_header_int(std::istream& in) {
  int c = in.peek();
  while (c == ' ' || c == '\n' || c == '\r' || c == '\t' || c == '#') {
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      in.get();
    }
    c = in.peek();
  }
  int v = 0;
  if (!(in >> v)) throw std::runtime_error("ppm: malformed header");
  return v;
}

}  // namespace

Image to_signed(const Image& unit) {
  Image out = unit;
  for (double& v : out.data) v = 2.0 * v - 1.0;
  return out;
}

Image to_unit(const Image& signed_image) {
  Image out = signed_image;
  for (double& v : out.data) v = 0.5 * (v + 1.0);
  return out;
}

Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("images_to_tensor: no images");
  const Image& first = images.front();
  std::vector<double> values;
  values.reserve(images.size() * first.data.size());
  for (const Image& im : images) {
    if (!im.same_shape(first)) throw ShapeError("images_to_tensor: images differ in shape");
    values.insert(values.end(), im.data.begin(), im.data.end());
  }
  return Tensor::from({static_cast<int>(images.size()), first.channels, first.height, first.width}, std::move(values));
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor({image}); }

Image tensor_to_image(const Tensor& t, int index) {
  if (t.rank() != 4) throw ShapeError("tensor_to_image: expected [N, C, H, W], got " + shape_str(t.shape()));
  Image out(t.dim(1), t.dim(2), t.dim(3));
  const std::size_t n = out.data.size();
  std::copy_n(t.data().data() + static_cast<std::size_t>(index) * n, n, out.data.begin());
  return out;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_ppm: image must have 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) out.put(static_cast<char>(to_byte(image.at(c, y, x))));
    }
  }
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error("ppm: " + path.string() + " is not a binary PPM");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw std::runtime_error("ppm: unsupported header");
  in.get();
  Image image(3, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int byte = in.get();
        if (byte == EOF) throw std::runtime_error("ppm: truncated pixel data");
        image.at(c, y, x) = static_cast<double>(byte) / maxval;
      }
    }
  }
  return image;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1) throw std::invalid_argument("write_pgm: image must have 1 channel");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (double v : image.data) out.put(static_cast<char>(to_byte(v)));
}

}  // namespace mnet
