#include "marionette/model/networks.hpp"

#include <algorithm>

#include "marionette/core/ops.hpp"

namespace mnet {

namespace {

void check_image(const Tensor& t, const char* what, int size) {
  if (t.rank() != 4 || t.dim(1) != kImageChannels || t.dim(2) != size || t.dim(3) != size) {
    throw ShapeError(std::string(what) + ": expected [N, 3, " + std::to_string(size) + ", " + std::to_string(size) +
                     "], got " + shape_str(t.shape()));
  }
}

}  // namespace

int GeneratorConfig::channels(int depth) const {
  long long c = base_channels;
  for (int d = 0; d < depth && c < max_channels; ++d) c *= 2;
  return static_cast<int>(std::min<long long>(c, max_channels));
}

void GeneratorConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0) {
    throw std::invalid_argument("GeneratorConfig: image size must be a positive multiple of 32, got " + std::to_string(image_size));
  }
  if (base_channels < 4 || base_channels % 4 != 0) {
    throw std::invalid_argument("GeneratorConfig: base channels must be a positive multiple of 4, got " +
                                std::to_string(base_channels));
  }
  if (max_channels < base_channels) throw std::invalid_argument("GeneratorConfig: max channels below base channels");
  if (targets < 1) throw std::invalid_argument("GeneratorConfig: need at least one target");
  if (identities < 1) throw std::invalid_argument("GeneratorConfig: need at least one identity");
}

void put_config(Checkpoint& ckpt, const GeneratorConfig& config) {
  ckpt.put_scalar("config.image_size", config.image_size);
  ckpt.put_scalar("config.base_channels", config.base_channels);
  ckpt.put_scalar("config.max_channels", config.max_channels);
  ckpt.put_scalar("config.targets", config.targets);
  ckpt.put_scalar("config.identities", config.identities);
}

GeneratorConfig get_config(const Checkpoint& ckpt) {
  GeneratorConfig c;
  c.image_size = static_cast<int>(ckpt.scalar("config.image_size"));
  c.base_channels = static_cast<int>(ckpt.scalar("config.base_channels"));
  c.max_channels = static_cast<int>(ckpt.scalar("config.max_channels"));
  c.targets = static_cast<int>(ckpt.scalar("config.targets"));
  c.identities = static_cast<int>(ckpt.scalar("config.identities"));
  c.validate();
  return c;
}

// ------------------------------------------------------------ target encoder

TargetEncoder::TargetEncoder(ParameterStore& store, const GeneratorConfig& c, Rng& rng)
    : input_(store, "target.input", 2 * kImageChannels, c.channels(0), 3, rng) {
  for (int j = 1; j <= kTargetDownBlocks; ++j) {
    down_.emplace_back(store, "target.down" + std::to_string(j), c.channels(j - 1), c.channels(j), false, rng);
  }
  // Up block j lands on the resolution of s_j and is followed by concat with s_j.
  for (int j = kTargetUpBlocks; j >= 1; --j) {
    const int cin = j == kTargetUpBlocks ? c.channels(kTargetDownBlocks) : 2 * c.channels(j + 1);
    up_.emplace_back(store, "target.up" + std::to_string(j), cin, c.channels(j), false, rng);
  }
  flow_ = Conv2d(store, "target.flow", 2 * c.channels(1), 2, 3, rng);
}

TargetFeatures TargetEncoder::operator()(const Tensor& y, const Tensor& r_y) const {
  if (y.shape() != r_y.shape()) {
    throw ShapeError("target_encoder: image " + shape_str(y.shape()) + " and landmark image " + shape_str(r_y.shape()) + " differ");
  }
  TargetFeatures out;
  Tensor h = input_(concat_channels({y, r_y}));
  std::vector<Tensor> s;
  for (const auto& block : down_) {
    h = block(h);
    s.push_back(h);
  }
  out.z_y = s.back();
  out.levels.assign(s.begin(), s.begin() + kTargetUpBlocks);

  Tensor u = out.z_y;
  for (int i = 0; i < kTargetUpBlocks; ++i) {
    const int j = kTargetUpBlocks - i;  // 4, 3, 2, 1
    u = concat_channels({up_[static_cast<std::size_t>(i)](u), s[static_cast<std::size_t>(j - 1)]});
  }
  out.flow = tanh(flow_(relu(u)));
  out.warped = normalize_target_features(out.levels, out.flow);
  return out;
}

// ------------------------------------------------------------ driver encoder

DriverEncoder::DriverEncoder(ParameterStore& store, const GeneratorConfig& c, Rng& rng)
    : input_(store, "driver.input", kImageChannels, c.channels(0), 3, rng) {
  for (int j = 1; j <= kDriverDownBlocks; ++j) {
    down_.emplace_back(store, "driver.down" + std::to_string(j), c.channels(j - 1), c.channels(j), true, rng);
  }
}

Tensor DriverEncoder::operator()(const Tensor& r_x) const {
  Tensor h = input_(r_x);
  for (const auto& block : down_) h = block(h);
  return h;
}

// ------------------------------------------------------------------ decoder

Decoder::Decoder(ParameterStore& store, const GeneratorConfig& c, Rng& rng) {
  // Block at depth j consumes S-hat_j (depth j channels) and upsamples to depth j - 1.
  for (int j = kDecoderBlocks; j >= 1; --j) {
    align.emplace_back(store, "decoder.align" + std::to_string(j), c.channels(j), rng);
    up.emplace_back(store, "decoder.up" + std::to_string(j), 2 * c.channels(j), c.channels(j - 1), true, rng);
  }
  output = Conv2d(store, "decoder.output", c.channels(0), kImageChannels, 3, rng);
}

Tensor Decoder::operator()(const Tensor& z_xy, std::span<const Tensor> aligned) const {
  if (aligned.size() != static_cast<std::size_t>(kDecoderBlocks)) {
    throw ShapeError("decoder: expected " + std::to_string(kDecoderBlocks) + " aligned target levels, got " +
                     std::to_string(aligned.size()));
  }
  Tensor u = z_xy;
  for (int i = 0; i < kDecoderBlocks; ++i) {
    const Tensor& s = aligned[static_cast<std::size_t>(kDecoderBlocks - 1 - i)];  // coarse to fine
    u = up[static_cast<std::size_t>(i)](align[static_cast<std::size_t>(i)](u, s));
  }
  return tanh(output(relu(instance_norm(u))));
}

// ---------------------------------------------------------------- generator

Generator::Generator(const GeneratorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  Rng init = rng.split(0x6e6e);
  target_encoder = TargetEncoder(store_, config_, init);
  driver_encoder = DriverEncoder(store_, config_, init);
  blender = Blender(store_, "blender", config_.channels(kDriverDownBlocks), config_.channels(kTargetDownBlocks), init);
  decoder = Decoder(store_, config_, init);
}

GeneratorOutput Generator::forward(const Tensor& r_x, const Tensor& y, const Tensor& r_y, int k) const {
  check_image(r_x, "generator driver landmarks", config_.image_size);
  check_image(y, "generator target images", config_.image_size);
  check_image(r_y, "generator target landmarks", config_.image_size);
  if (k < 1 || y.dim(0) != r_x.dim(0) * k || r_y.dim(0) != y.dim(0)) {
    throw ShapeError("generator: " + std::to_string(r_x.dim(0)) + " drivers need " + std::to_string(r_x.dim(0)) + " x K=" +
                     std::to_string(k) + " targets, got " + std::to_string(y.dim(0)) + " images and " +
                     std::to_string(r_y.dim(0)) + " landmark images");
  }
  GeneratorOutput out;
  out.targets = target_encoder(y, r_y);
  out.z_x = driver_encoder(r_x);
  const Tensor& zy = out.targets.z_y;
  out.z_y = reshape(zy, {r_x.dim(0), k, zy.dim(1), zy.dim(2), zy.dim(3)});
  out.z_xy = blender(out.z_x, out.z_y);
  std::vector<Tensor> aligned;
  for (const Tensor& level : out.targets.warped) aligned.push_back(mean_over_targets(level, k));
  out.image = decoder(out.z_xy, aligned);
  return out;
}

// ------------------------------------------------------------ discriminator

Discriminator::Discriminator(const GeneratorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  Rng init = rng.split(0xd15c);
  input_ = Conv2d(store_, "disc.input", 2 * kImageChannels, config_.channels(0), 3, init);
  for (int j = 1; j <= kDiscriminatorDownBlocks; ++j) {
    down_.emplace_back(store_, "disc.down" + std::to_string(j), config_.channels(j - 1), config_.channels(j), false, init);
  }
  const int c5 = config_.channels(kDiscriminatorDownBlocks);
  score_ = Conv2d(store_, "disc.score", c5, 1, 1, init);
  embedding = store_.add("disc.embedding", Tensor::from({config_.identities, c5}, orthogonal_init(config_.identities, c5, init)));
}

DiscriminatorOutput Discriminator::forward(const Tensor& image, const Tensor& landmarks, std::span<const int> identities) const {
  check_image(image, "discriminator image", config_.image_size);
  check_image(landmarks, "discriminator landmarks", config_.image_size);
  if (image.dim(0) != landmarks.dim(0) || static_cast<int>(identities.size()) != image.dim(0)) {
    throw ShapeError("discriminator: batch sizes of images, landmark images and identities differ");
  }
  for (int id : identities) {
    if (id < 0 || id >= config_.identities) {
      throw std::out_of_range("discriminator: identity " + std::to_string(id) + " outside [0, " +
                              std::to_string(config_.identities) + ")");
    }
  }
  DiscriminatorOutput out;
  Tensor h = input_(concat_channels({image, landmarks}));
  for (const auto& block : down_) {
    h = block(h);
    out.taps.push_back(h);
  }
  const Tensor features = relu(h);  // [N, c, s, s]
  const int n = features.dim(0);
  const int c = features.dim(1);
  const Tensor e = reshape(mnet::embedding(embedding, identities), {n, c, 1, 1});
  // Per-position projection <e, phi(x)> summed over channels.
  const Tensor projection = reshape(mean_over_axis(features * e, 1), {n, 1, features.dim(2), features.dim(3)});
  out.score = score_(features) + scale(projection, static_cast<double>(c));
  return out;
}

}  // namespace mnet
