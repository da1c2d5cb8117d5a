#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace meet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  bool released = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad, accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major float64 array with an optional gradient slot. Copies share
// storage (handle semantics); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access for leaves (parameters, inputs, finite-difference probes).
  std::span<double> data_mut();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Reverse-mode pass from a scalar. Gradients accumulate into every
  // requires_grad tensor reached; the recorded graph is released afterwards.
  void backward();

  // Same storage values, no history, requires_grad=false.
  Tensor detach() const;
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Op construction. `parents` that require grad make the result record
  // `backward` for later replay.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward);

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const detail::Node& checked() const;
  detail::Node& checked();

  std::shared_ptr<detail::Node> node_;
};

}  // namespace meet
