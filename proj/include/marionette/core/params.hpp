#pragma once

#include <deque>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "marionette/core/rng.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

// Power-iteration estimates of the leading singular pair of a weight viewed
// as [rows = output channels, cols = everything else].
struct SpectralState {
  std::string name;
  Tensor weight;
  Eigen::VectorXd u;
  Eigen::VectorXd v;
  bool warned = false;
};

SpectralState make_spectral_state(std::string name, const Tensor& weight, Rng& rng);

// One power-iteration step; keeps the previous vectors if the weight maps them
// to zero.
void power_iteration(SpectralState& state);

// u^T W v with the current vectors.
double estimated_sigma(const SpectralState& state);

// weight / sigma_hat, differentiable w.r.t. weight with u, v held constant.
// `update` runs one power iteration first. A vanishing sigma_hat is clamped
// to kSpectralEps with a one-time warning on stderr.
inline constexpr double kSpectralEps = 1e-12;
inline constexpr int kSpectralWarmupIterations = 10;
Tensor spectral_normalize(const Tensor& weight, SpectralState& state, bool update = true);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Owns the trainable leaves of one network plus their spectral-norm state.
// Not copyable: layers keep pointers into the spectral state list.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Tensor add(const std::string& name, Tensor init);
  // Runs kSpectralWarmupIterations power iterations on the new state.
  SpectralState* add_spectral(const std::string& name, const Tensor& weight, Rng& rng);

  const std::vector<NamedTensor>& named() const { return params_; }
  std::vector<Tensor> tensors() const;
  std::deque<SpectralState>& spectral() { return spectral_; }
  const std::deque<SpectralState>& spectral() const { return spectral_; }
  std::size_t parameter_count() const;

  void zero_grad();
  void update_spectral();
  void set_trainable(bool trainable);

 private:
  std::vector<NamedTensor> params_;
  std::deque<SpectralState> spectral_;
};

// Orthogonal init of a [rows, cols] matrix (rows orthonormal if rows <= cols,
// columns orthonormal otherwise) scaled by gain.
std::vector<double> orthogonal_init(int rows, int cols, Rng& rng, double gain = 1.0);

struct LayerOptions {
  bool bias = true;
  bool spectral = true;
  int stride = 1;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
         LayerOptions options = {});

  Tensor operator()(const Tensor& x) const;
  Tensor effective_weight() const;

  Tensor weight;
  Tensor bias;
  SpectralState* sn = nullptr;
  int stride = 1;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in_features, int out_features, Rng& rng,
         LayerOptions options = {});

  Tensor operator()(const Tensor& x) const;
  Tensor effective_weight() const;

  Tensor weight;
  Tensor bias;
  SpectralState* sn = nullptr;
};

}  // namespace mnet
