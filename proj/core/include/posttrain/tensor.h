#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace posttrain {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  // Empty until first touched by backward or grad().
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// Dense row-major array taking part in reverse-mode differentiation.
//
// Tensor is a handle: copies share storage and gradient. Use clone() for a
// deep, detached copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const { return shape().at(i); }
  std::size_t numel() const;
  // Product of all but the last dimension.
  std::size_t rows() const;
  // Size of the last dimension.
  std::size_t cols() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  // Allocates a zero gradient buffer on first access.
  std::span<T> grad();
  // Empty span if no gradient was ever accumulated.
  std::span<const T> grad() const;
  void zero_grad();

  Tensor clone() const;
  // Shares data with this tensor but is cut from the graph.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }
  static Tensor from_node(NodePtr node);

 private:
  NodePtr node_;
};

// Accumulates d(loss)/d(x) into the grad of every requires_grad leaf reachable
// from `loss`. Leaf gradients are summed into, never overwritten.
template <typename T>
void backward(const Tensor<T>& loss);

bool grad_enabled();

// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace posttrain
