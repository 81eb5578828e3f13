#include "marionette/train/disentangler.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "marionette/core/ops.hpp"
#include "marionette/core/optim.hpp"

namespace mnet::train {

namespace {

constexpr int kStageChannels[kDisentanglerStages] = {8, 16, 32, 32};

int flat_features(int image_size) {
  const int side = image_size >> kDisentanglerStages;
  return kStageChannels[kDisentanglerStages - 1] * side * side;
}

Tensor offsets_tensor(std::span<const Landmark68> normalized, const Landmark68& mean) {
  std::vector<double> v;
  v.reserve(normalized.size() * kLandmarkFeatures);
  for (const auto& l : normalized) {
    const Landmark68 d = l - mean;
    for (int i = 0; i < geometry::kNumLandmarks; ++i)
      for (int j = 0; j < 3; ++j) v.push_back(d(i, j));
  }
  return Tensor::from({static_cast<int>(normalized.size()), kLandmarkFeatures}, std::move(v));
}

struct Batch {
  Tensor images;
  Tensor offsets;
  Tensor targets;
};

Batch make_batch(const synth::Corpus& corpus, std::span<const DisentanglerExample> examples,
                 std::span<const std::size_t> picks, const ExpressionBasis<double>& basis) {
  std::vector<Image> images;
  std::vector<Landmark68> normalized;
  std::vector<double> targets;
  for (std::size_t i : picks) {
    const auto& e = examples[i];
    images.push_back(corpus.render(e.clip, e.frame));
    normalized.push_back(e.normalized);
    targets.insert(targets.end(), e.target.data(), e.target.data() + geometry::kExpressionDim);
  }
  return {images_to_tensor(images), offsets_tensor(normalized, basis.mean_landmark),
          Tensor::from({static_cast<int>(picks.size()), geometry::kExpressionDim}, std::move(targets))};
}

}  // namespace

Disentangler::Disentangler(int image_size, int hidden, Rng& rng) : image_size_(image_size), hidden_(hidden) {
  if (image_size < (1 << kDisentanglerStages) || image_size % (1 << kDisentanglerStages) != 0) {
    throw std::invalid_argument("Disentangler: image size must be a positive multiple of 16");
  }
  if (hidden <= 0) throw std::invalid_argument("Disentangler: hidden width must be positive");
  const LayerOptions conv{.bias = true, .spectral = false, .stride = 2};
  int cin = 3;
  for (int s = 0; s < kDisentanglerStages; ++s) {
    stages_.emplace_back(store_, "dis.stage" + std::to_string(s), cin, kStageChannels[s], 3, rng, conv);
    cin = kStageChannels[s];
  }
  const LayerOptions dense{.bias = true, .spectral = false};
  fc1_ = Linear(store_, "dis.fc1", flat_features(image_size) + kLandmarkFeatures, hidden, rng, dense);
  fc2_ = Linear(store_, "dis.fc2", hidden, geometry::kExpressionDim, rng, dense);
}

Tensor Disentangler::forward(const Tensor& images, const Tensor& offsets) const {
  const int n = images.dim(0);
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != image_size_ || images.dim(3) != image_size_) {
    throw ShapeError("Disentangler: images " + shape_str(images.shape()) + " do not match size " +
                     std::to_string(image_size_));
  }
  if (offsets.shape() != Shape{n, kLandmarkFeatures}) {
    throw ShapeError("Disentangler: offsets " + shape_str(offsets.shape()) + ", expected [" + std::to_string(n) + ", 204]");
  }
  Tensor h = images;
  for (const auto& stage : stages_) h = relu(stage(h));
  const int f = flat_features(image_size_);
  const Tensor joint = concat_channels({reshape(h, {n, f, 1, 1}), reshape(offset_scale * offsets, {n, kLandmarkFeatures, 1, 1})});
  return fc2_(relu(fc1_(reshape(joint, {n, f + kLandmarkFeatures}))));
}

ExpressionCoeffs<double> Disentangler::predict(const Image& image, const Landmark68& normalized,
                                               const ExpressionBasis<double>& basis) const {
  const Landmark68 one[] = {normalized};
  const Tensor out = forward(image_to_tensor(image), offsets_tensor(one, basis.mean_landmark));
  ExpressionCoeffs<double> alpha;
  for (int i = 0; i < geometry::kExpressionDim; ++i) alpha[i] = out[static_cast<std::size_t>(i)];
  return alpha;
}

void put_disentangler(Checkpoint& ckpt, const Disentangler& model) {
  ckpt.put_scalar("dis.image_size", model.image_size());
  ckpt.put_scalar("dis.hidden", model.hidden());
  ckpt.put_scalar("dis.offset_scale", model.offset_scale);
  put_parameters(ckpt, "", model.parameters());
}

std::unique_ptr<Disentangler> get_disentangler(const Checkpoint& ckpt) {
  Rng unused(0);
  auto model = std::make_unique<Disentangler>(static_cast<int>(ckpt.scalar("dis.image_size")),
                                              static_cast<int>(ckpt.scalar("dis.hidden")), unused);
  model->offset_scale = ckpt.scalar("dis.offset_scale");
  load_parameters(ckpt, "", model->parameters());
  return model;
}

void check_basis_groups(const ExpressionBasis<double>& basis) {
  const auto& specs = geometry::expression_groups();
  for (int g = 0; g < geometry::kNumExpressionGroups; ++g) {
    const auto& gb = basis.groups[static_cast<std::size_t>(g)];
    const auto& spec = specs[static_cast<std::size_t>(g)];
    const auto rows = 3 * static_cast<Eigen::Index>(spec.indices.size());
    if (gb.basis.rows() != rows || gb.basis.cols() != spec.components || gb.stddev.size() != spec.components) {
      throw std::invalid_argument(std::string("basis group '") + spec.name + "' is " + std::to_string(gb.basis.rows()) +
                                  " x " + std::to_string(gb.basis.cols()) + ", expected " + std::to_string(rows) +
                                  " x " + std::to_string(spec.components));
    }
  }
}

std::vector<DisentanglerExample> make_disentangler_examples(const synth::Corpus& corpus, std::span<const int> clips,
                                                            const ExpressionBasis<double>& basis) {
  check_basis_groups(basis);
  std::vector<DisentanglerExample> out;
  for (int c : clips) {
    const auto& clip = corpus.clips.at(static_cast<std::size_t>(c));
    std::vector<Landmark68> normalized;
    Landmark68 mean = Landmark68::Zero();
    for (const auto& l : clip.landmarks) {
      normalized.push_back(geometry::normalize_landmark(l, basis.mean_landmark).landmark);
      mean += normalized.back();
    }
    mean /= static_cast<double>(normalized.size());
    for (int t = 0; t < clip.frames(); ++t) {
      const auto& l = normalized[static_cast<std::size_t>(t)];
      out.push_back({c, t, l, geometry::project_expression<double>(l - mean, basis)});
    }
  }
  return out;
}

double disentangler_mse(const Disentangler& model, const synth::Corpus& corpus,
                        std::span<const DisentanglerExample> examples, const ExpressionBasis<double>& basis) {
  if (examples.empty()) throw std::invalid_argument("disentangler_mse: no examples");
  constexpr std::size_t kChunk = 64;
  double total = 0.0;
  for (std::size_t start = 0; start < examples.size(); start += kChunk) {
    std::vector<std::size_t> picks;
    for (std::size_t i = start; i < std::min(examples.size(), start + kChunk); ++i) picks.push_back(i);
    const Batch b = make_batch(corpus, examples, picks, basis);
    const Tensor pred = model.forward(b.images, b.offsets);
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      const double d = pred[i] - b.targets[i];
      total += d * d;
    }
  }
  return total / static_cast<double>(examples.size() * geometry::kExpressionDim);
}

DisentanglerReport train_disentangler(Disentangler& model, const synth::Corpus& corpus,
                                      std::span<const DisentanglerExample> train,
                                      std::span<const DisentanglerExample> held_out,
                                      const ExpressionBasis<double>& basis, const TrainConfig& config) {
  config.validate();
  check_basis_groups(basis);
  if (train.empty()) throw std::invalid_argument("train_disentangler: no training examples");
  if (corpus.config.image_size != model.image_size()) {
    throw std::invalid_argument("train_disentangler: corpus images are " + std::to_string(corpus.config.image_size) +
                                " px, model expects " + std::to_string(model.image_size()));
  }
  double sq = 0.0;
  for (const auto& e : train) sq += (e.normalized - basis.mean_landmark).squaredNorm();
  const double rms = std::sqrt(sq / static_cast<double>(train.size() * kLandmarkFeatures));
  model.offset_scale = rms > 0.0 ? 1.0 / rms : 1.0;

  auto params = model.parameters().tensors();
  AdamState adam = make_adam_state(params, {.lr = config.disentangler_lr, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8});
  const Rng root = Rng(config.seed).split(0xd15e);
  DisentanglerReport report;
  for (int step = 0; step < config.disentangler_steps; ++step) {
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    std::vector<std::size_t> picks(static_cast<std::size_t>(config.disentangler_batch));
    for (auto& p : picks) p = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(train.size())));
    const Batch b = make_batch(corpus, train, picks, basis);
    model.parameters().zero_grad();
    const Tensor loss = mean(square(model.forward(b.images, b.offsets) - b.targets));
    loss.backward();
    clip_grad_norm(params, config.grad_clip);
    adam_step(adam, params);
    report.train_loss.push_back(loss.item());
  }
  if (!held_out.empty()) {
    report.held_out_mse = disentangler_mse(model, corpus, held_out, basis);
    double zero = 0.0;
    for (const auto& e : held_out) zero += e.target.squaredNorm();
    report.zero_baseline = zero / static_cast<double>(held_out.size() * geometry::kExpressionDim);
  }
  return report;
}

geometry::LandmarkParts<double> estimate_landmark_parts(const Disentangler& model, const Image& image,
                                                        const Landmark68& normalized,
                                                        const ExpressionBasis<double>& basis, double lambda_exp) {
  return geometry::split_landmark(normalized, model.predict(image, normalized, basis), basis, lambda_exp);
}

}  // namespace mnet::train
