#pragma once

#include <string>

#include "marionette/core/params.hpp"
#include "marionette/core/tensor.hpp"

namespace mnet {

// Pre-activation residual blocks. Down: [IN] relu conv3 [IN] relu conv3 pool2,
// shortcut conv1x1(pool2). Up: [IN] relu up2 conv3 [IN] relu conv3, shortcut
// conv1x1(up2). Convs feeding an instance norm carry no bias.
struct ResBlockDown {
  bool norm = false;
  Conv2d conv1, conv2, shortcut;

  ResBlockDown() = default;
  ResBlockDown(ParameterStore& store, const std::string& name, int cin, int cout, bool norm, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

struct ResBlockUp {
  bool norm = false;
  Conv2d conv1, conv2, shortcut;

  ResBlockUp() = default;
  ResBlockUp(ParameterStore& store, const std::string& name, int cin, int cout, bool norm, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace mnet
