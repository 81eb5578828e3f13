#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mnet {

using Shape = std::vector<int>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Storage for values and gradients. Eigen picks its vectorized summation
// order from the runtime address alignment, so every buffer starts on the
// widest packet boundary to keep results independent of heap layout.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

namespace detail {
struct Node;
}

// Shared handle to a node of the autodiff graph. Values are immutable once an
// op has produced them; only leaf tensors (parameters) may be edited in place,
// and only between graph constructions.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Leaf tensors only.
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Same values, no history.
  Tensor detach() const;

  // Reverse-mode sweep from this scalar. Leaf gradients accumulate across
  // calls; intermediate gradients are rebuilt every sweep.
  void backward() const;

  ConstMatrixMap matrix(int rows, int cols) const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(const Node& out)>;

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  const char* op = "leaf";

  // Lazily allocated, zero-filled.
  Buffer& grad_buffer();
};

// Builds an op result. History is recorded only when some input requires
// grad; `backward` receives the finished node and must add into the inputs'
// grad buffers (guarded by their requires_grad flags).
Tensor record(const char* op, Shape shape, Buffer value, const std::vector<Tensor>& inputs,
              BackwardFn backward);

bool any_requires_grad(const std::vector<Tensor>& inputs);
void check_finite(const Tensor& t, const char* op);

}  // namespace detail

}  // namespace mnet
