#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mdcl/common.hpp"

namespace mdcl {

// One node in the reverse-mode autodiff graph. Nodes own their value buffer;
// the grad buffer is allocated lazily the first time backward touches it.
// `backprop` reads this node's grad and accumulates into the parents' grads.
template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  std::function<void(TensorNode<T>&)> backprop;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

// Value-semantics handle to a graph node. Copying a Tensor aliases the node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T v);
  static Tensor scalar(T v) { return full({1}, v); }
  static Tensor from_data(Shape shape, std::vector<T> data);
  // Trainable leaf: requires_grad set, updated in place by the optimizer.
  static Tensor param(Shape shape, std::vector<T> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const T> values() const { return node_->value; }
  // In-place mutation is reserved for leaves (optimizer updates, data loading).
  std::span<T> values_mut() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  T item() const {
    check(size() == 1, "item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  // Same value, cut off from the graph (no parents, no grad).
  Tensor detach() const;

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Escape hatch for fused operations defined outside this module: wraps a
// precomputed value with a custom backward pass. requires_grad is inherited
// from the parents.
template <typename T>
Tensor<T> make_op(Shape shape, std::vector<T> value, std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backprop);

// Elementwise binary ops with trailing-aligned broadcasting.
// minimum/maximum route the gradient to the first operand on ties.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> maximum(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

// Elementwise unary ops.
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> abs(const Tensor<T>& a);        // grad 0 at x == 0
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> sin(const Tensor<T>& a);
template <typename T> Tensor<T> cos(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> elu(const Tensor<T>& a);        // alpha = 1
template <typename T> Tensor<T> softplus(const Tensor<T>& a);   // log(1 + e^x), overflow-safe
// Gradient passes only where lo < x < hi.
template <typename T> Tensor<T> clamp(const Tensor<T>& a, T lo, T hi);

// 0/1 indicator of a < b (broadcasting); constant, never carries gradient.
template <typename T> Tensor<T> less_than(const Tensor<T>& a, const Tensor<T>& b);

// Shape ops (all copy; backward scatters the gradient back).
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> narrow(const Tensor<T>& a, int axis, int start, int len);
// Crop over the last two dims, any leading dims.
template <typename T> Tensor<T> crop_hw(const Tensor<T>& a, int top, int left, int h, int w);

// Reductions.
template <typename T> Tensor<T> reduce_mean(const Tensor<T>& a);
template <typename T> Tensor<T> reduce_sum(const Tensor<T>& a);
template <typename T> Tensor<T> reduce_mean_axis(const Tensor<T>& a, int axis, bool keepdim);
template <typename T> Tensor<T> reduce_sum_axis(const Tensor<T>& a, int axis, bool keepdim);
// Minimum over one axis (axis dropped); gradient routes to the first argmin.
template <typename T> Tensor<T> reduce_min_axis(const Tensor<T>& a, int axis);

// conv2d over NCHW input with OIKK weight, zero padding, square stride.
// bias may be undefined (Tensor()); if given it has shape {O}.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding);

// Bilinear resize of NCHW maps, align_corners = false (pixel-center mapping).
template <typename T> Tensor<T> bilinear_resize(const Tensor<T>& a, int out_h, int out_w);

// Bilinear sampling of NCHW input at per-pixel positions. grid is
// {N, Hg, Wg, 2} holding (x, y) in pixel coordinates; out-of-range positions
// clamp to the border. Differentiable in both input and grid.
template <typename T> Tensor<T> grid_sample(const Tensor<T>& input, const Tensor<T>& grid);

// Reverse-mode sweep from a scalar loss. Seeds d(loss)/d(loss) = 1 and
// accumulates into every reachable node with requires_grad.
template <typename T> void backward(const Tensor<T>& loss);

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace mdcl
