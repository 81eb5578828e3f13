#include "marionette/core/params.hpp"

#include <cmath>
#include <iostream>

#include <Eigen/QR>

#include "marionette/core/ops.hpp"

namespace mnet {

namespace {

int spectral_rows(const Tensor& w) { return w.dim(0); }
int spectral_cols(const Tensor& w) { return static_cast<int>(w.numel() / static_cast<std::size_t>(w.dim(0))); }

Eigen::VectorXd random_unit(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v / v.norm();
}

}  // namespace

SpectralState make_spectral_state(std::string name, const Tensor& weight, Rng& rng) {
  if (weight.rank() < 2) throw ShapeError("spectral norm needs a weight of rank >= 2, got " + shape_str(weight.shape()));
  SpectralState s;
  s.name = std::move(name);
  s.weight = weight;
  s.u = random_unit(spectral_rows(weight), rng);
  s.v = random_unit(spectral_cols(weight), rng);
  return s;
}

void power_iteration(SpectralState& state) {
  ConstMatrixMap w = state.weight.matrix(spectral_rows(state.weight), spectral_cols(state.weight));
  Eigen::VectorXd v = w.transpose() * state.u;
  const double vn = v.norm();
  if (vn > 0.0) state.v = v / vn;
  Eigen::VectorXd u = w * state.v;
  const double un = u.norm();
  if (un > 0.0) state.u = u / un;
}

double estimated_sigma(const SpectralState& state) {
  ConstMatrixMap w = state.weight.matrix(spectral_rows(state.weight), spectral_cols(state.weight));
  return state.u.dot(w * state.v);
}

Tensor spectral_normalize(const Tensor& weight, SpectralState& state, bool update) {
  detail::check_finite(weight, "spectral_normalize");
  if (state.weight.node() != weight.node()) state.weight = weight;
  if (update) power_iteration(state);
  const int rows = spectral_rows(weight);
  const int cols = spectral_cols(weight);
  double sigma = estimated_sigma(state);
  bool clamped = false;
  if (!(sigma > kSpectralEps)) {
    if (!state.warned) {
      std::cerr << "warning: spectral norm of '" << state.name << "' is " << sigma << ", clamped to " << kSpectralEps
                << '\n';
      state.warned = true;
    }
    sigma = kSpectralEps;
    clamped = true;
  }
  Buffer out(weight.numel());
  const auto wv = weight.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = wv[i] / sigma;

  const Eigen::VectorXd u = state.u;
  const Eigen::VectorXd v = state.v;
  return detail::record("spectral_normalize", weight.shape(), std::move(out), {weight},
                        [=](const detail::Node& o) {
                          if (!weight.requires_grad()) return;
                          auto& gw = weight.node()->grad_buffer();
                          const auto wv2 = weight.data();
                          double inner = 0.0;
                          for (std::size_t i = 0; i < o.grad.size(); ++i) inner += o.grad[i] * wv2[i];
                          for (std::size_t i = 0; i < o.grad.size(); ++i) gw[i] += o.grad[i] / sigma;
                          if (clamped) return;
                          MatrixMap g(gw.data(), rows, cols);
                          g.noalias() -= (inner / (sigma * sigma)) * (u * v.transpose());
                        });
}

Tensor ParameterStore::add(const std::string& name, Tensor init) {
  init.set_requires_grad(true);
  params_.push_back({name, init});
  return init;
}

SpectralState* ParameterStore::add_spectral(const std::string& name, const Tensor& weight, Rng& rng) {
  spectral_.push_back(make_spectral_state(name, weight, rng));
  // Start from a converged estimate so the first forward pass is already normalized.
  for (int i = 0; i < kSpectralWarmupIterations; ++i) power_iteration(spectral_.back());
  return &spectral_.back();
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void ParameterStore::update_spectral() {
  for (auto& s : spectral_) power_iteration(s);
}

void ParameterStore::set_trainable(bool trainable) {
  for (auto& p : params_) p.tensor.set_requires_grad(trainable);
}

std::vector<double> orthogonal_init(int rows, int cols, Rng& rng, double gain) {
  const bool wide = rows <= cols;
  const int tall_rows = wide ? cols : rows;
  const int tall_cols = wide ? rows : cols;
  Eigen::MatrixXd a(tall_rows, tall_cols);
  for (int j = 0; j < tall_cols; ++j) {
    for (int i = 0; i < tall_rows; ++i) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(tall_rows, tall_cols);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(tall_cols).triangularView<Eigen::Upper>();
  for (int j = 0; j < tall_cols; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  std::vector<double> out(static_cast<std::size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) out[static_cast<std::size_t>(i) * cols + j] = gain * (wide ? q(j, i) : q(i, j));
  }
  return out;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
               LayerOptions options)
    : stride(options.stride) {
  weight = store.add(name + ".weight",
                     Tensor::from({out_channels, in_channels, kernel, kernel},
                                  orthogonal_init(out_channels, in_channels * kernel * kernel, rng)));
  if (options.bias) bias = store.add(name + ".bias", Tensor::zeros({out_channels}));
  if (options.spectral) sn = store.add_spectral(name + ".weight", weight, rng);
}

Tensor Conv2d::effective_weight() const { return sn ? spectral_normalize(weight, *sn, false) : weight; }

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, effective_weight(), bias, stride); }

Linear::Linear(ParameterStore& store, const std::string& name, int in_features, int out_features, Rng& rng,
               LayerOptions options) {
  weight = store.add(name + ".weight",
                     Tensor::from({out_features, in_features}, orthogonal_init(out_features, in_features, rng)));
  if (options.bias) bias = store.add(name + ".bias", Tensor::zeros({out_features}));
  if (options.spectral) sn = store.add_spectral(name + ".weight", weight, rng);
}

Tensor Linear::effective_weight() const { return sn ? spectral_normalize(weight, *sn, false) : weight; }

Tensor Linear::operator()(const Tensor& x) const { return linear(x, effective_weight(), bias); }

}  // namespace mnet
