#include "meet/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_set>

#include "meet/errors.hpp"

namespace meet {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (values.size() != shape_numel(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const detail::Node& Tensor::checked() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

detail::Node& Tensor::checked() {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return checked().data.size(); }

std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::data_mut() { return checked().data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return checked().data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= s[i]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[i] + v;
    ++i;
  }
  return checked().data[flat];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool on) { checked().requires_grad = on; }
bool Tensor::has_grad() const { return !checked().grad.empty(); }
std::span<const double> Tensor::grad() const { return checked().grad; }
std::span<double> Tensor::grad_mut() { return checked().ensure_grad(); }
void Tensor::zero_grad() { checked().grad.clear(); }

Tensor Tensor::detach() const {
  return from(shape(), checked().data, false);
}

Tensor Tensor::clone() const { return from(shape(), checked().data, requires_grad()); }

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->is_leaf = false;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

void Tensor::backward() {
  auto& root = checked();
  if (root.data.size() != 1) {
    throw DimensionError("backward() requires a scalar, got shape " + shape_str(root.shape));
  }
  if (root.released) throw std::logic_error("backward() called twice on the same recorded graph");
  if (!root.requires_grad) throw std::logic_error("backward() on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->is_leaf) continue;
    if (n->released) throw std::logic_error("backward() through an already released graph");
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
  for (detail::Node* n : order) {
    if (n->is_leaf) continue;
    n->backward_fn = nullptr;
    n->parents.clear();
    n->released = true;
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
}

}  // namespace meet
