#include "marionette/model/losses.hpp"

#include <cmath>
#include <string>

#include "marionette/core/ops.hpp"
#include "marionette/core/rng.hpp"

namespace mnet {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

}  // namespace

Tensor hinge_d_loss(const Tensor& real, const Tensor& fake) {
  require_same_shape(real, fake, "hinge_d_loss");
  return mean(relu(add_scalar(-real, 1.0))) + mean(relu(add_scalar(fake, 1.0)));
}

Tensor hinge_g_loss(const Tensor& fake) { return -mean(fake); }

Tensor feature_matching_loss(std::span<const Tensor> real, std::span<const Tensor> fake) {
  if (real.size() != fake.size()) {
    throw std::invalid_argument("feature_matching_loss: " + std::to_string(real.size()) + " real taps vs " +
                                std::to_string(fake.size()) + " fake taps");
  }
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < real.size(); ++i) {
    require_same_shape(real[i], fake[i], "feature_matching_loss");
    total = total + mean(abs(fake[i] - real[i].detach()));
  }
  return total;
}

FeatureNet::FeatureNet(std::uint64_t seed, std::vector<int> widths, int in_channels) : seed_(seed) {
  if (widths.size() != static_cast<std::size_t>(kFeatureNetStages)) {
    throw std::invalid_argument("FeatureNet: expected " + std::to_string(kFeatureNetStages) + " stage widths");
  }
  Rng rng(seed);
  int cin = in_channels;
  for (int cout : widths) {
    const int fan_in = cin * 9;
    const double gain = std::sqrt(2.0 / fan_in);
    std::vector<double> w(static_cast<std::size_t>(cout) * fan_in);
    for (double& v : w) v = gain * rng.normal();
    weights_.push_back(Tensor::from({cout, cin, 3, 3}, std::move(w)));
    cin = cout;
  }
}

std::vector<Tensor> FeatureNet::taps(const Tensor& x) const {
  if (weights_.empty()) throw std::logic_error("FeatureNet: not initialized");
  std::vector<Tensor> out;
  Tensor h = x;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (i > 0) h = avg_pool2d(h, 2);
    h = relu(conv2d(h, weights_[i]));
    out.push_back(h);
  }
  return out;
}

Tensor perceptual_loss(const Tensor& x, const Tensor& x_hat, const Tensor& mask, const FeatureNet& net) {
  require_same_shape(x, x_hat, "perceptual_loss");
  if (mask.defined()) {
    const Shape expected = {x.dim(0), 1, x.dim(2), x.dim(3)};
    if (mask.shape() != expected) {
      throw ShapeError("perceptual_loss: mask " + shape_str(mask.shape()) + " does not match " + shape_str(expected));
    }
  }
  const auto a = net.taps(x);
  const auto b = net.taps(x_hat);
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor diff = abs(a[i] - b[i]);
    if (mask.defined()) {
      const int factor = x.dim(2) / a[i].dim(2);
      const Tensor m = factor > 1 ? avg_pool2d(mask.detach(), factor) : mask.detach();
      diff = diff * add_scalar(2.0 * m, 1.0);
    }
    total = total + mean(diff);
  }
  return total * (1.0 / static_cast<double>(a.size()));
}

Tensor generator_total_loss(const GeneratorLossParts& parts, const LossWeights& weights) {
  return parts.gan + weights.perceptual * parts.perceptual + weights.perceptual_face * parts.perceptual_face +
         weights.feature_matching * parts.feature_matching;
}

}  // namespace mnet
