#include "marionette/core/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mnet {

AdamState make_adam_state(std::span<const Tensor> params, AdamOptions options) {
  AdamState state;
  state.options = options;
  for (const Tensor& p : params) {
    state.first_moment.emplace_back(p.numel(), 0.0);
    state.second_moment.emplace_back(p.numel(), 0.0);
  }
  return state;
}

void adam_step(AdamState& state, std::span<Tensor> params) {
  if (params.size() != state.first_moment.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (params[i].numel() != state.first_moment[i].size()) {
      throw ShapeError("adam_step: moment buffer size differs for parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].mutable_data();
    const auto grad = params[i].grad();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = o.beta1 * m[j] + (1.0 - o.beta1) * grad[j];
      v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      value[j] -= o.lr * m_hat / (std::sqrt(v_hat) + o.eps);
    }
  }
}

double global_grad_norm(std::span<const Tensor> params) {
  double total = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) total += g * g;
  }
  return std::sqrt(total);
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Tensor& p : params) {
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace mnet
