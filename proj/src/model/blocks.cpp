#include "marionette/model/blocks.hpp"

#include "marionette/core/ops.hpp"

namespace mnet {

ResBlockDown::ResBlockDown(ParameterStore& store, const std::string& name, int cin, int cout, bool use_norm, Rng& rng)
    : norm(use_norm),
      conv1(store, name + ".conv1", cin, cout, 3, rng, {.bias = !use_norm}),
      conv2(store, name + ".conv2", cout, cout, 3, rng),
      shortcut(store, name + ".shortcut", cin, cout, 1, rng) {}

Tensor ResBlockDown::operator()(const Tensor& x) const {
  Tensor h = relu(norm ? instance_norm(x) : x);
  h = conv1(h);
  h = conv2(relu(norm ? instance_norm(h) : h));
  // Pooling commutes with the 1x1 shortcut, so pool first.
  return avg_pool2d(h, 2) + shortcut(avg_pool2d(x, 2));
}

ResBlockUp::ResBlockUp(ParameterStore& store, const std::string& name, int cin, int cout, bool use_norm, Rng& rng)
    : norm(use_norm),
      conv1(store, name + ".conv1", cin, cout, 3, rng, {.bias = !use_norm}),
      conv2(store, name + ".conv2", cout, cout, 3, rng),
      shortcut(store, name + ".shortcut", cin, cout, 1, rng) {}

Tensor ResBlockUp::operator()(const Tensor& x) const {
  Tensor h = nearest_upsample2d(relu(norm ? instance_norm(x) : x), 2);
  h = conv1(h);
  h = conv2(relu(norm ? instance_norm(h) : h));
  return h + shortcut(nearest_upsample2d(x, 2));
}

}  // namespace mnet
