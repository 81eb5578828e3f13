#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace mnet::train {

struct TrainConfig {
  // GAN
  int targets = 4;  // K
  double d_lr = 2e-4;
  double g_lr = 5e-5;
  int d_updates_per_g = 1;
  int steps = 1000;
  int batch_size = 2;
  int image_size = 32;
  int base_channels = 8;
  int max_channels = 64;
  int checkpoint_every = 0;  // 0: only at the end
  std::uint64_t seed = 1;
  std::uint64_t perceptual_seed = 101;
  std::uint64_t face_seed = 202;

  // disentangler
  double disentangler_lr = 3e-4;
  double grad_clip = 1.0;
  int disentangler_steps = 2000;
  int disentangler_batch = 16;
  int disentangler_hidden = 128;

  void validate() const;
};

// Flat `name = value` lines; '#' starts a comment. Keys not present keep
// their defaults; unknown keys and malformed values throw.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = {});
// Every field, one per line, in declaration order. Parses back to the same config.
std::string format_train_config(const TrainConfig& config);

// FNV-1a of format_train_config; stored in checkpoints to refuse resuming
// under a different configuration.
std::uint64_t config_fingerprint(const TrainConfig& config);

}  // namespace mnet::train
