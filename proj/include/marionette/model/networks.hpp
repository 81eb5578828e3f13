#pragma once

#include <span>
#include <string>
#include <vector>

#include "marionette/core/checkpoint.hpp"
#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"
#include "marionette/model/attention.hpp"
#include "marionette/model/blocks.hpp"
#include "marionette/model/warp.hpp"

namespace mnet {

inline constexpr int kTargetDownBlocks = 5;
inline constexpr int kTargetUpBlocks = 4;
inline constexpr int kDriverDownBlocks = 4;
inline constexpr int kDecoderBlocks = 4;
inline constexpr int kDiscriminatorDownBlocks = 5;
inline constexpr int kImageChannels = 3;

struct GeneratorConfig {
  int image_size = 64;
  int base_channels = 32;
  int max_channels = 512;
  int targets = 4;  // K
  int identities = 1;  // rows of the discriminator's identity embedding

  // min(base * 2^depth, max)
  int channels(int depth) const;
  void validate() const;
};

void put_config(Checkpoint& ckpt, const GeneratorConfig& config);
GeneratorConfig get_config(const Checkpoint& ckpt);

struct TargetFeatures {
  Tensor z_y;                  // s5, [N*K, c5, H/32, W/32]
  std::vector<Tensor> levels;  // s1..s4 before warping
  std::vector<Tensor> warped;  // S-hat 1..4
  Tensor flow;                 // f_y, [N*K, 2, H/2, W/2]
};

// U-Net without normalization over concat(y, r_y).
class TargetEncoder {
 public:
  TargetEncoder() = default;
  TargetEncoder(ParameterStore& store, const GeneratorConfig& config, Rng& rng);
  TargetFeatures operator()(const Tensor& y, const Tensor& r_y) const;

 private:
  Conv2d input_;
  std::vector<ResBlockDown> down_;
  std::vector<ResBlockUp> up_;
  Conv2d flow_;
};

class DriverEncoder {
 public:
  DriverEncoder() = default;
  DriverEncoder(ParameterStore& store, const GeneratorConfig& config, Rng& rng);
  Tensor operator()(const Tensor& r_x) const;

 private:
  Conv2d input_;
  std::vector<ResBlockDown> down_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterStore& store, const GeneratorConfig& config, Rng& rng);
  // u starts as z_xy; `aligned` holds averaged S-hat 1..4 (finest first).
  Tensor operator()(const Tensor& z_xy, std::span<const Tensor> aligned) const;

  std::vector<WarpAlignBlock> align;
  std::vector<ResBlockUp> up;
  Conv2d output;
};

struct GeneratorOutput {
  Tensor image;  // [N, 3, H, W] in [-1, 1]
  Tensor z_x;
  Tensor z_y;  // [N, K, c, h, w]
  Tensor z_xy;
  TargetFeatures targets;
};

class Generator {
 public:
  explicit Generator(const GeneratorConfig& config, Rng& rng);

  // r_x: [N, 3, H, W]; y, r_y: [N*K, 3, H, W] with the K targets of each
  // sample adjacent.
  GeneratorOutput forward(const Tensor& r_x, const Tensor& y, const Tensor& r_y, int k) const;
  Tensor operator()(const Tensor& r_x, const Tensor& y, const Tensor& r_y, int k) const {
    return forward(r_x, y, r_y, k).image;
  }

  const GeneratorConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  TargetEncoder target_encoder;
  DriverEncoder driver_encoder;
  Blender blender;
  Decoder decoder;

 private:
  GeneratorConfig config_;
  ParameterStore store_;
};

struct DiscriminatorOutput {
  Tensor score;               // [N, 1, H/32, W/32]
  std::vector<Tensor> taps;  // outputs of the five down blocks
};

// Projection discriminator over concat(image, landmark image), scoring every
// patch of the final map.
class Discriminator {
 public:
  explicit Discriminator(const GeneratorConfig& config, Rng& rng);

  DiscriminatorOutput forward(const Tensor& image, const Tensor& landmarks, std::span<const int> identities) const;

  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  Tensor embedding;  // [identities, c5]

 private:
  GeneratorConfig config_;
  ParameterStore store_;
  Conv2d input_;
  std::vector<ResBlockDown> down_;
  Conv2d score_;
};

}  // namespace mnet
