#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "depthlab/common.hpp"

namespace depthlab {

// Define-by-run reverse-mode autodiff. Every forward op allocates a fresh
// node; the graph lives exactly as long as the tensors referencing it and is
// rebuilt on the next forward pass. A graph and its tensors are confined to
// one thread during forward/backward; tensors with requires_grad=false are
// immutable after creation and safe to share across threads.

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first use, accumulated across backward calls
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<T>>> parents;
  // Pulls this node's grad into the parents' grads. Null for leaves and for
  // nodes created under NoGradGuard.
  std::function<void(TensorNode<T>&)> backprop;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

// Disables graph construction in scope (evaluation / benchmarking).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool enabled();

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T v);
  static Tensor from_data(Shape shape, std::vector<T> data);
  static Tensor scalar(T v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return node_->numel(); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }

  std::vector<T>& data() { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T& at(int64_t i) { return node_->value[static_cast<size_t>(i)]; }
  T at(int64_t i) const { return node_->value[static_cast<size_t>(i)]; }

  // scalar extraction; rejects non-scalars
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(node_->value.size(), T(0));
  }

  // Reverse-mode sweep from a scalar. Leaf grads accumulate; the caller
  // zeroes them between optimization steps.
  void backward() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<TensorNode<T>> make_node(Shape shape, std::vector<T> value) {
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Wires a result node to its parents unless grad mode is off or no parent
// carries gradient state.
template <typename T, typename Fn>
void attach(std::shared_ptr<TensorNode<T>>& out,
            std::vector<std::shared_ptr<TensorNode<T>>> parents, Fn&& fn) {
  if (!NoGradGuard::enabled()) return;
  bool any = false;
  for (const auto& p : parents)
    if (p->requires_grad) any = true;
  if (!any) return;
  out->requires_grad = true;
  out->parents = std::move(parents);
  out->backprop = std::forward<Fn>(fn);
}

}  // namespace detail

// ---- elementwise / reduction ops ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
// mask holds {0,1} and carries no gradient; empty support is an error so loss
// terms skip instead of dividing by zero
template <typename T> Tensor<T> masked_mean(const Tensor<T>& a, const Tensor<T>& mask);

// ---- shape ops (NCHW) ----
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> crop(const Tensor<T>& a, int y0, int x0, int h, int w);
// [N,C,H,W] -> [N,1,H,W], mean over channels
template <typename T> Tensor<T> channel_mean(const Tensor<T>& a);

}  // namespace depthlab
