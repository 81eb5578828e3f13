#include "marionette/train/gan.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "marionette/core/ops.hpp"
#include "marionette/geometry/raster.hpp"

namespace mnet::train {

namespace {

constexpr std::uint64_t kBatchStream = 0x9a4b;
constexpr std::uint64_t kStepStream = 0x57e9;
constexpr std::uint64_t kGeneratorSlot = 0xffff;

void no_grad_forward(ParameterStore& store, bool off) { store.set_trainable(!off); }

}  // namespace

Image landmark_image(const geometry::Landmark68& l, int size) { return to_signed(geometry::rasterize(l, size, size)); }

GanBatch sample_gan_batch(const synth::Corpus& corpus, std::span<const int> clips, int batch, int k, Rng& rng) {
  if (clips.empty()) throw std::invalid_argument("sample_gan_batch: no clips");
  if (batch <= 0 || k <= 0) throw std::invalid_argument("sample_gan_batch: batch and K must be positive");
  const int size = corpus.config.image_size;
  std::vector<Image> x, r_x, y, r_y, mask;
  GanBatch out;
  for (int b = 0; b < batch; ++b) {
    const int c = clips[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(clips.size())))];
    const auto& clip = corpus.clips.at(static_cast<std::size_t>(c));
    const int frames = clip.frames();
    std::vector<int> picks;
    if (frames >= k + 1) {
      std::vector<int> order(static_cast<std::size_t>(frames));
      for (int i = 0; i < frames; ++i) order[static_cast<std::size_t>(i)] = i;
      // Partial Fisher-Yates: the first K + 1 entries are a uniform draw without replacement.
      for (int i = 0; i <= k; ++i) std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i + rng.uniform_int(frames - i))]);
      picks.assign(order.begin(), order.begin() + k + 1);
    } else {
      out.with_replacement = true;
      for (int i = 0; i <= k; ++i) picks.push_back(rng.uniform_int(frames));
    }
    const auto& driver = clip.landmarks[static_cast<std::size_t>(picks[0])];
    x.push_back(corpus.render(c, picks[0]));
    r_x.push_back(landmark_image(driver, size));
    mask.push_back(geometry::face_mask(driver, size, size));
    for (int i = 1; i <= k; ++i) {
      y.push_back(corpus.render(c, picks[static_cast<std::size_t>(i)]));
      r_y.push_back(landmark_image(clip.landmarks[static_cast<std::size_t>(picks[static_cast<std::size_t>(i)])], size));
    }
    out.identities.push_back(clip.identity);
  }
  out.x = images_to_tensor(x);
  out.r_x = images_to_tensor(r_x);
  out.y = images_to_tensor(y);
  out.r_y = images_to_tensor(r_y);
  out.mask = images_to_tensor(mask);
  return out;
}

bool StepLosses::finite() const {
  return std::isfinite(d_loss) && std::isfinite(g_loss) && std::isfinite(l_p) && std::isfinite(l_pf) &&
         std::isfinite(l_fm);
}

GeneratorConfig generator_config(const TrainConfig& config, int identities) {
  GeneratorConfig g;
  g.image_size = config.image_size;
  g.base_channels = config.base_channels;
  g.max_channels = config.max_channels;
  g.targets = config.targets;
  g.identities = identities;
  g.validate();
  return g;
}

GanTrainer::GanTrainer(const TrainConfig& config, const synth::Corpus& corpus, std::vector<int> clips)
    : config_(config),
      corpus_(&corpus),
      clips_(std::move(clips)),
      perceptual_(config.perceptual_seed),
      face_(config.face_seed) {
  config_.validate();
  if (clips_.empty()) throw std::invalid_argument("GanTrainer: no training clips");
  if (corpus.config.image_size != config_.image_size) {
    throw std::invalid_argument("GanTrainer: corpus images are " + std::to_string(corpus.config.image_size) +
                                " px, config asks for " + std::to_string(config_.image_size));
  }
  for (int c : clips_) {
    if (c < 0 || static_cast<std::size_t>(c) >= corpus.clips.size()) {
      throw std::out_of_range("GanTrainer: clip index " + std::to_string(c) + " out of range");
    }
  }
  const GeneratorConfig gc = generator_config(config_, static_cast<int>(corpus.identities.size()));
  Rng g_rng = Rng(config_.seed).split(0x6e);
  Rng d_rng = Rng(config_.seed).split(0xd0);
  g_ = std::make_unique<Generator>(gc, g_rng);
  d_ = std::make_unique<Discriminator>(gc, d_rng);
  g_adam_ = make_adam_state(g_->parameters().tensors(), {.lr = config_.g_lr});
  d_adam_ = make_adam_state(d_->parameters().tensors(), {.lr = config_.d_lr});
}

GanBatch GanTrainer::sample(std::uint64_t stream, int batch) const {
  Rng rng = Rng(config_.seed).split(kBatchStream).split(stream);
  return sample_gan_batch(*corpus_, clips_, batch, config_.targets, rng);
}

StepLosses GanTrainer::step() {
  const int k = config_.targets;
  g_->parameters().update_spectral();
  d_->parameters().update_spectral();
  StepLosses out;

  auto g_params = g_->parameters().tensors();
  auto d_params = d_->parameters().tensors();
  for (int u = 0; u < config_.d_updates_per_g; ++u) {
    Rng rng = Rng(config_.seed).split(kStepStream).split(static_cast<std::uint64_t>(step_)).split(static_cast<std::uint64_t>(u));
    const GanBatch b = sample_gan_batch(*corpus_, clips_, config_.batch_size, k, rng);
    if (b.with_replacement) ++replacement_draws_;
    no_grad_forward(g_->parameters(), true);
    const Tensor fake = (*g_)(b.r_x, b.y, b.r_y, k);
    no_grad_forward(g_->parameters(), false);
    d_->parameters().zero_grad();
    const Tensor real_score = d_->forward(b.x, b.r_x, b.identities).score;
    const Tensor fake_score = d_->forward(fake, b.r_x, b.identities).score;
    const Tensor d_loss = hinge_d_loss(real_score, fake_score);
    d_loss.backward();
    adam_step(d_adam_, d_params);
    out.d_loss = d_loss.item();
  }

  Rng rng = Rng(config_.seed).split(kStepStream).split(static_cast<std::uint64_t>(step_)).split(kGeneratorSlot);
  const GanBatch b = sample_gan_batch(*corpus_, clips_, config_.batch_size, k, rng);
  if (b.with_replacement) ++replacement_draws_;
  g_->parameters().zero_grad();
  no_grad_forward(d_->parameters(), true);
  const Tensor x_hat = (*g_)(b.r_x, b.y, b.r_y, k);
  const auto real = d_->forward(b.x, b.r_x, b.identities);
  const auto fake = d_->forward(x_hat, b.r_x, b.identities);
  GeneratorLossParts parts{hinge_g_loss(fake.score), perceptual_loss(b.x, x_hat, b.mask, perceptual_),
                           perceptual_loss(b.x, x_hat, {}, face_), feature_matching_loss(real.taps, fake.taps)};
  const Tensor g_loss = generator_total_loss(parts);
  g_loss.backward();
  no_grad_forward(d_->parameters(), false);
  adam_step(g_adam_, g_params);

  out.g_loss = g_loss.item();
  out.l_p = parts.perceptual.item();
  out.l_pf = parts.perceptual_face.item();
  out.l_fm = parts.feature_matching.item();
  out.step = ++step_;
  return out;
}

Checkpoint GanTrainer::checkpoint() {
  quantize_parameters(g_->parameters());
  quantize_parameters(d_->parameters());
  quantize_adam_state(g_adam_);
  quantize_adam_state(d_adam_);
  Checkpoint ckpt;
  put_config(ckpt, g_->config());
  put_parameters(ckpt, "", g_->parameters());
  put_parameters(ckpt, "", d_->parameters());
  put_adam_state(ckpt, "adam.g.", g_adam_);
  put_adam_state(ckpt, "adam.d.", d_adam_);
  ckpt.put_u64("train.step", static_cast<std::uint64_t>(step_));
  ckpt.put_u64("train.fingerprint", config_fingerprint(config_));
  return ckpt;
}

void GanTrainer::restore(const Checkpoint& ckpt) {
  if (ckpt.get_u64("train.fingerprint") != config_fingerprint(config_)) {
    throw std::runtime_error("checkpoint was written under a different training configuration");
  }
  load_parameters(ckpt, "", g_->parameters());
  load_parameters(ckpt, "", d_->parameters());
  load_adam_state(ckpt, "adam.g.", g_adam_);
  load_adam_state(ckpt, "adam.d.", d_adam_);
  step_ = static_cast<std::int64_t>(ckpt.get_u64("train.step"));
}

double GanTrainer::mean_l1(const GanBatch& batch) const {
  g_->parameters().set_trainable(false);
  const Tensor out = (*g_)(batch.r_x, batch.y, batch.r_y, config_.targets);
  g_->parameters().set_trainable(true);
  return mean(abs(out - batch.x)).item();
}

std::unique_ptr<Generator> load_generator(const Checkpoint& ckpt) {
  Rng unused(0);
  auto g = std::make_unique<Generator>(get_config(ckpt), unused);
  load_parameters(ckpt, "", g->parameters());
  return g;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const StepLosses> rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "step,d_loss,g_loss,l_p,l_pf,l_fm\n";
  for (const auto& r : rows) {
    out << r.step << ',' << r.d_loss << ',' << r.g_loss << ',' << r.l_p << ',' << r.l_pf << ',' << r.l_fm << '\n';
  }
}

}  // namespace mnet::train
