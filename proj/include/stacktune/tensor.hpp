#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace stacktune {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Thrown when a training loss is NaN or infinite. Phase 0 is pre-training.
class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(int epoch, int phase)
      : Error("non-finite training loss at epoch " + std::to_string(epoch) + " of phase " + std::to_string(phase)),
        epoch_(epoch),
        phase_(phase) {}
  int epoch() const { return epoch_; }
  int phase() const { return phase_; }

 private:
  int epoch_;
  int phase_;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local int no_grad_depth = 0;

// Non-smooth ops (relu, max, floors) append their branch decisions here while
// a trace is active. The gradient checker compares traces to tell whether a
// finite-difference probe crossed a kink.
inline thread_local std::vector<std::uint64_t>* branch_trace = nullptr;

inline void record_branch(std::uint64_t bits) {
  if (branch_trace) branch_trace->push_back(bits);
}

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when the value is not differentiable
  bool requires_grad = false;
  bool leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return leaf; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

/// Dense row-major array with an optional gradient buffer and backward-graph
/// node. Copies share the underlying node.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = stacktune::numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static BasicTensor full(Shape shape, T value, bool requires_grad = false) {
    const std::size_t n = stacktune::numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
  }

  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (stacktune::numel(shape) != values.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                       std::to_string(stacktune::numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return BasicTensor(std::move(node));
  }

  static BasicTensor scalar(T value, bool requires_grad = false) {
    return from(Shape{}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  /// Size along `axis`; negative values count from the back.
  std::size_t dim(int axis) const { return node_->shape[normalize_axis(axis)]; }

  std::size_t normalize_axis(int axis) const {
    const int r = static_cast<int>(rank());
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       shape_str(shape()));
    }
    return static_cast<std::size_t>(a);
  }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<T> grad() { return node_->grad; }
  std::span<const T> grad() const { return node_->grad; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->ensure_grad();
  }

  bool is_leaf() const { return node_->is_leaf(); }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor has shape " + shape_str(shape()));
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  /// Value copy detached from the graph.
  BasicTensor detach() const { return from(shape(), node_->data, false); }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;

/// Builds an op output. The backward closure and input links are kept only
/// when recording is on and some input needs a gradient.
template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           const std::vector<BasicTensor<T>>& inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->leaf = false;
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return BasicTensor<T>(std::move(node));
}

template <class T>
BasicTensor<T> make_result(const char* op, Shape shape, std::vector<T> values,
                           std::initializer_list<BasicTensor<T>> inputs,
                           std::function<void(Node<T>&)> backward_fn) {
  return make_result<T>(op, std::move(shape), std::move(values),
                        std::vector<BasicTensor<T>>(inputs), std::move(backward_fn));
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate (+=);
/// intermediate buffers are scratch and reset on every call.
template <class T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS; inputs visited in declaration order so the
  // resulting topological order is deterministic.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(loss.node(), 0);
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* node : order) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  }
  Node<T>* root = loss.node();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

template <class T>
void zero_grad(std::span<BasicTensor<T>> tensors) {
  for (auto& t : tensors) {
    if (t.has_grad()) std::fill(t.grad().begin(), t.grad().end(), T(0));
    else if (t.requires_grad()) t.node()->ensure_grad();
  }
}

template <class T>
void zero_grad(std::vector<BasicTensor<T>>& tensors) {
  zero_grad(std::span<BasicTensor<T>>(tensors));
}

}  // namespace stacktune
