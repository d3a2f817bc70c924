#include "posttrain/tensor.h"

#include <algorithm>
#include <unordered_set>

#include "posttrain/error.h"

namespace posttrain {
namespace {

thread_local bool g_grad_enabled = true;

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw InvalidArgument("tensor data length " +
                          std::to_string(values.size()) +
                          " does not match shape " + shape_to_string(shape));
  }
  node_ = std::make_shared<detail::Node<T>>();
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return node_ ? node_->data.size() : 0;
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) n *= s[i];
  return n;
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

template <typename T>
std::span<T> Tensor<T>::data() {
  return node_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) {
    throw InvalidArgument("item() on tensor of shape " +
                          shape_to_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  node_->requires_grad = value;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size();
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  node_->ensure_grad();
  return node_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) return {};
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.assign(node_->data.size(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out(node_->shape, node_->data, node_->requires_grad);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = node_->shape;
  node->data = node_->data;
  return from_node(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
  Tensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw InvalidArgument("backward() requires a scalar loss, got shape " +
                          (loss.defined() ? shape_to_string(loss.shape())
                                          : std::string("<undefined>")));
  }
  using NodePtr = typename Tensor<T>::NodePtr;
  const NodePtr& root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> visited;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  // Interior gradients are recomputed from scratch on every call; only leaves
  // accumulate across calls.
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  }
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* node = *it;
    if (node->backward) {
      for (auto& p : node->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      node->backward(*node);
    }
  }
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace posttrain
