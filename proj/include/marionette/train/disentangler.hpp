#pragma once

#include <memory>
#include <span>
#include <vector>

#include "marionette/core/checkpoint.hpp"
#include "marionette/core/params.hpp"
#include "marionette/geometry/landmarks.hpp"
#include "marionette/image.hpp"
#include "marionette/synth/corpus.hpp"
#include "marionette/train/config.hpp"

namespace mnet::train {

using geometry::ExpressionBasis;
using geometry::ExpressionCoeffs;
using geometry::Landmark68;

inline constexpr int kDisentanglerStages = 4;
inline constexpr int kLandmarkFeatures = 3 * geometry::kNumLandmarks;

// Four stride-2 conv stages over the image, flattened, concatenated with the
// scaled landmark offset l - l_m, then a two-layer MLP to the 48 whitened
// expression coefficients.
class Disentangler {
 public:
  Disentangler(int image_size, int hidden, Rng& rng);

  // images: [N, 3, H, W] in [-1, 1]; offsets: [N, 204] (unscaled l - l_m).
  Tensor forward(const Tensor& images, const Tensor& offsets) const;
  ExpressionCoeffs<double> predict(const Image& image, const Landmark68& normalized,
                                   const ExpressionBasis<double>& basis) const;

  int image_size() const { return image_size_; }
  int hidden() const { return hidden_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  double offset_scale = 1.0;

 private:
  int image_size_;
  int hidden_;
  ParameterStore store_;
  std::vector<Conv2d> stages_;
  Linear fc1_;
  Linear fc2_;
};

void put_disentangler(Checkpoint& ckpt, const Disentangler& model);
std::unique_ptr<Disentangler> get_disentangler(const Checkpoint& ckpt);

struct DisentanglerExample {
  int clip = 0;
  int frame = 0;
  Landmark68 normalized = Landmark68::Zero();  // aligned onto basis.mean_landmark
  ExpressionCoeffs<double> target = ExpressionCoeffs<double>::Zero();
};

// Throws std::invalid_argument unless every group has the standard component
// count and point count.
void check_basis_groups(const ExpressionBasis<double>& basis);

// Normalizes every frame of the given clips, decomposes each clip around its
// own mean and projects the expression offsets onto the basis.
std::vector<DisentanglerExample> make_disentangler_examples(const synth::Corpus& corpus, std::span<const int> clips,
                                                            const ExpressionBasis<double>& basis);

struct DisentanglerReport {
  std::vector<double> train_loss;  // per step
  double held_out_mse = 0.0;       // per coefficient
  double zero_baseline = 0.0;      // held-out MSE of predicting 0
};

// Adam with the configured lr, gradient norm clipped to grad_clip, MSE on
// whitened coefficients. Sets model.offset_scale from the training offsets.
DisentanglerReport train_disentangler(Disentangler& model, const synth::Corpus& corpus,
                                      std::span<const DisentanglerExample> train,
                                      std::span<const DisentanglerExample> held_out,
                                      const ExpressionBasis<double>& basis, const TrainConfig& config);

double disentangler_mse(const Disentangler& model, const synth::Corpus& corpus,
                        std::span<const DisentanglerExample> examples, const ExpressionBasis<double>& basis);

// alpha = M(x, l); expression = lambda * basis(alpha); identity = l - l_m - expression.
geometry::LandmarkParts<double> estimate_landmark_parts(const Disentangler& model, const Image& image,
                                                        const Landmark68& normalized,
                                                        const ExpressionBasis<double>& basis, double lambda_exp);

}  // namespace mnet::train
