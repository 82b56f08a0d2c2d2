#include "gdpl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace gdpl {

namespace {
thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> make_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + shape_string(shape) + " cannot hold " +
                     std::to_string(values.size()) + " values");
  }
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("zero extent in shape " + shape_string(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return node;
}

const detail::Node& checked(const std::shared_ptr<detail::Node>& node) {
  if (!node) throw GraphError("use of an undefined tensor");
  return *node;
}
}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return wrap(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return wrap(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  return wrap(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::parameter(std::string name, Shape shape, std::vector<double> values) {
  auto t = from_data(std::move(shape), std::move(values), true);
  t.node_->name = std::move(name);
  return t;
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).value.size(); }

std::span<const double> Tensor::values() const { return checked(node_).value; }

std::span<double> Tensor::mutable_values() {
  checked(node_);
  if (!node_->leaf) throw GraphError("only leaf tensors may be written in place");
  return node_->value;
}

double Tensor::item() const {
  const auto& n = checked(node_);
  if (n.value.size() != 1) {
    throw ShapeError("item() requires a single-element tensor, got " + shape_string(n.shape));
  }
  return n.value[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  checked(node_);
  if (!node_->leaf) throw GraphError("requires_grad can only be changed on leaves");
  node_->requires_grad = flag;
  if (!flag) node_->grad.clear();
}

bool Tensor::is_leaf() const { return checked(node_).leaf; }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
  checked(node_);
  node_->grad.clear();
}

const std::string& Tensor::name() const { return checked(node_).name; }

void Tensor::set_name(std::string name) {
  checked(node_);
  node_->name = std::move(name);
}

Tensor Tensor::detach() const {
  const auto& n = checked(node_);
  return from_data(n.shape, n.value, false);
}

Tensor Tensor::clone() const {
  const auto& n = checked(node_);
  auto t = from_data(n.shape, n.value, n.requires_grad);
  t.node_->name = n.name;
  return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  detail::Node* root = loss.node();
  if (root->value.size() != 1) {
    throw GraphError("backward requires a scalar loss, got shape " + shape_string(root->shape));
  }
  if (root->consumed) {
    throw GraphError("backward already ran on this graph; rebuild it with a new forward pass");
  }
  if (!root->requires_grad) {
    throw GraphError("loss does not depend on any tensor that requires grad");
  }

  // Iterative post-order DFS over interior nodes. Shared pointers keep every
  // visited node alive while parent links are being released.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(loss.node_ptr(), 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const std::shared_ptr<detail::Node>& parent = node->parents[next++];
      if (parent->leaf || !parent->requires_grad || visited.count(parent.get())) continue;
      if (parent->consumed) {
        throw GraphError("graph contains nodes released by an earlier backward pass");
      }
      visited.insert(parent.get());
      auto keep = parent;
      stack.emplace_back(std::move(keep), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = it->get();
    if (!node->grad.empty() && node->backward) node->backward();
  }
  for (const auto& node : order) {
    node->consumed = true;
    node->backward = nullptr;
    node->parents.clear();
    if (node.get() != root) {
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

}  // namespace gdpl
