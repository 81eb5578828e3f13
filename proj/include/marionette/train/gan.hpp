#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "marionette/core/checkpoint.hpp"
#include "marionette/core/optim.hpp"
#include "marionette/model/losses.hpp"
#include "marionette/model/networks.hpp"
#include "marionette/synth/corpus.hpp"
#include "marionette/train/config.hpp"

namespace mnet::train {

// One driver frame and K targets from the same clip, per sample.
struct GanBatch {
  Tensor x;       // driver frame, [N, 3, H, W] in [-1, 1]
  Tensor r_x;     // driver landmark image, [-1, 1]
  Tensor y;       // [N*K, 3, H, W]
  Tensor r_y;     // [N*K, 3, H, W]
  Tensor mask;    // driver face mask, [N, 1, H, W]
  std::vector<int> identities;
  bool with_replacement = false;  // some clip had fewer than K + 1 frames
};

// Landmark images as seen by the networks: the [0, 1] raster mapped to [-1, 1].
Image landmark_image(const geometry::Landmark68& l, int size);

GanBatch sample_gan_batch(const synth::Corpus& corpus, std::span<const int> clips, int batch, int k, Rng& rng);

struct StepLosses {
  std::int64_t step = 0;  // 1-based index of the completed step
  double d_loss = 0, g_loss = 0, l_p = 0, l_pf = 0, l_fm = 0;

  bool finite() const;
  bool operator==(const StepLosses&) const = default;
};

GeneratorConfig generator_config(const TrainConfig& config, int identities);

class GanTrainer {
 public:
  // `clips` are the training clips; the corpus must outlive the trainer.
  GanTrainer(const TrainConfig& config, const synth::Corpus& corpus, std::vector<int> clips);

  // Spectral power iteration for G and D, then d_updates_per_g D steps and one G step.
  StepLosses step();
  std::int64_t steps_done() const { return step_; }

  // Quantizes the live parameters, spectral vectors and Adam moments to
  // storage precision first, so continuing and resuming agree bit for bit.
  Checkpoint checkpoint();
  void restore(const Checkpoint& ckpt);

  // Mean |G(...) - x| over a batch, without touching any state.
  double mean_l1(const GanBatch& batch) const;
  // Batch from a stream disjoint from the one the training steps draw from.
  GanBatch sample(std::uint64_t stream, int batch) const;

  Generator& generator() { return *g_; }
  Discriminator& discriminator() { return *d_; }
  const FeatureNet& perceptual_net() const { return perceptual_; }
  const FeatureNet& face_net() const { return face_; }
  const TrainConfig& config() const { return config_; }
  int replacement_draws() const { return replacement_draws_; }

 private:
  TrainConfig config_;
  const synth::Corpus* corpus_;
  std::vector<int> clips_;
  std::unique_ptr<Generator> g_;
  std::unique_ptr<Discriminator> d_;
  FeatureNet perceptual_;
  FeatureNet face_;
  AdamState g_adam_;
  AdamState d_adam_;
  std::int64_t step_ = 0;
  int replacement_draws_ = 0;
};

// Generator configuration and weights from a training checkpoint.
std::unique_ptr<Generator> load_generator(const Checkpoint& ckpt);

// Header step,d_loss,g_loss,l_p,l_pf,l_fm; values with 17 significant digits.
void write_metrics_csv(const std::filesystem::path& path, std::span<const StepLosses> rows);

}  // namespace mnet::train
