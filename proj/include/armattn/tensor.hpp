// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle: copies alias the same buffer, as in most
// tensor libraries. Primitive applications are recorded on the thread's
// active Tape whenever at least one input requires a gradient; without an
// active tape the engine runs in inference mode and records nothing.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace armattn {

using Shape = std::vector<std::size_t>;

/// Thrown when operand shapes violate a primitive's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation produces NaN or Inf.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is accumulated
  bool requires_grad = false;
  bool is_leaf = true;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim() const { return shape().size(); }
  /// Extent of `axis`; negative axes count from the back.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view for initializers and optimizers. Never call while a tape
  /// that saved this tensor is still pending backward.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Copy of the values with no gradient history.
  Tensor detach() const;

  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  // Engine internals.
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  detail::TensorImpl& checked() const;
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Ordered record of primitive applications for one forward pass.
///
/// Constructing a Tape makes it the active tape of the calling thread until
/// it is destroyed; tapes nest like a stack. backward() walks the records in
/// reverse exactly once and then marks the tape consumed.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable
  /// from `loss`. Leaf gradients add to whatever is already stored.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Tape* active();

  // Engine internals.
  struct Node {
    const char* name;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    // Reads output->grad, accumulates into inputs[i]->grad where required.
    std::function<void(const Node&)> adjoint;
  };
  void record(Node node);

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

}  // namespace armattn
