#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace malab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;

// Accumulates the gradient of one recorded operation into its inputs.
// grad_in[i] is null when input i does not take part in differentiation.
using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      std::span<std::vector<double>* const> grad_in)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

}  // namespace detail

// Dense row-major array of doubles. Copies share the underlying buffer;
// values are treated as immutable except through mutable_data(), which is
// reserved for optimizer updates on leaf parameters.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return data().size(); }
  std::size_t dim(std::size_t axis) const;
  std::span<const double> data() const& { return node_->data; }
  // A temporary's buffer may die with it, e.g. in `for (double v : f().data())`.
  std::span<const double> data() const&& = delete;
  std::span<double> mutable_data() { return node_->data; }

  double item() const;
  double operator[](std::size_t flat) const { return node_->data[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  // Only valid on leaves.
  void set_requires_grad(bool on);
  bool is_leaf() const;
  // Same values, no graph history, no gradient tracking.
  Tensor detach() const;
  // Deep copy of values as a fresh leaf.
  Tensor clone(bool requires_grad = false) const;

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Records a derived tensor on the graph. Gradient tracking is enabled
  // when grad mode is on and any input requires grad.
  static Tensor record(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                       detail::BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Bitwise equality of shape and payload.
bool bitwise_equal(const Tensor& a, const Tensor& b);

// Largest absolute elementwise difference; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);

bool grad_enabled();

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace malab
