// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace pbsr {

/// Extents of a rank-4 (N, C, H, W) array.
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {
template <typename T>
struct TensorImpl;
}

/// Dense rank-4 tensor with reverse-mode gradient tracking.
///
/// A tensor is a shared handle. Ops never mutate their inputs; they produce a
/// new tensor that records its parents when any input requires a gradient.
/// Calling backward() on a scalar walks the recorded graph and accumulates
/// into every reachable tensor's grad buffer.
///
/// Training runs in float32 (`Tensor`); the double instantiation (`Tensor64`)
/// exists so finite-difference checks can evaluate the same function without
/// float32 rounding in the numeric derivative.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static BasicTensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().numel(); }

  std::span<const T> data() const;
  /// Writable view of the values. Only valid for leaves; mutating an
  /// interior node breaks its backward pass.
  std::span<T> mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  T item() const;
  T at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  /// Same values, no history, no gradient.
  BasicTensor detach() const;
  /// Deep copy as a fresh leaf.
  BasicTensor clone(bool requires_grad = false) const;

  /// Backpropagate from a single-element tensor with upstream gradient 1.
  void backward() const;
  /// Backpropagate with an explicit upstream gradient of this tensor's shape.
  void backward(std::span<const T> upstream) const;

  // Internal use by op implementations.
  explicit BasicTensor(std::shared_ptr<detail::TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads self.grad, accumulates into parents' grads.
  std::function<void(TensorImpl& self)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

/// Value conversion between precisions; the result is a leaf.
template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t, bool requires_grad = false) {
  return BasicTensor<To>::from_data(t.shape(), std::vector<To>(t.data().begin(), t.data().end()), requires_grad);
}

enum class ResizeDirection { up, down };

// ---- Operators -------------------------------------------------------------
// Defined for float and double.

/// Cross-correlation with zero padding. `bias` holds Cout elements in any
/// shape (parameters store it as a vector).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride = 1, std::size_t padding = 0);

/// max(x, slope * x). Throws NumericError on NaN input.
template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& input, T slope = T(0.2));
template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  return leaky_relu(input, T{0});
}

/// Nearest-neighbour resize by an integer factor. Down takes the top-left
/// sample of each factor x factor block.
template <typename T>
BasicTensor<T> resize_nearest(const BasicTensor<T>& input, std::size_t factor, ResizeDirection direction);

/// Mean of all elements, as a (1,1,1,1) tensor.
template <typename T>
BasicTensor<T> reduce_mean(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Channel-wise concatenation; N, H, W must match.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, T value);
template <typename T>
BasicTensor<T> abs(const BasicTensor<T>& a);

// ---- Finite-difference verification ---------------------------------------

struct GradCheckOptions {
  double epsilon = 1e-3;
  std::uint64_t seed = 0;      // upstream projection weights
  std::size_t max_coords = 0;  // per input; 0 = every coordinate
  /// Skip coordinates whose perturbation crosses a non-differentiable point.
  /// Detected when central differences at h and h/2 disagree by more than
  /// `kink_tolerance` (relative).
  bool exclude_kinks = true;
  double kink_tolerance = 1e-4;
};

struct GradCheckReport {
  double max_error = 0.0;
  std::size_t probed = 0;
  std::size_t excluded = 0;
};

/// Scalar type of a span of tensors, for generic ops passed to grad_check.
template <typename Span>
using span_scalar_t = typename std::remove_cvref_t<Span>::value_type::value_type;

using TensorFn = std::function<Tensor(std::span<const Tensor>)>;
using Tensor64Fn = std::function<Tensor64(std::span<const Tensor64>)>;

/// Compares reverse-mode gradients of `f` against central differences.
///
/// Inputs are widened to double and both sides run in double through the
/// same templated ops, so the comparison is not swamped by float32 rounding.
/// The output is reduced to a scalar by a fixed random projection so every
/// output coordinate contributes. Inputs with requires_grad are probed.
/// Returns the max over probed coordinates of
/// |analytic - numeric| / max(1e-6, |analytic| + |numeric|).
GradCheckReport grad_check_report(const Tensor64Fn& f, std::span<const Tensor> inputs,
                                  const GradCheckOptions& options = {});
inline double grad_check(const Tensor64Fn& f, std::span<const Tensor> inputs, const GradCheckOptions& options = {}) {
  return grad_check_report(f, inputs, options).max_error;
}

/// Convenience for generic lambdas written against both tensor types.
template <typename Op>
  requires std::is_invocable_v<const Op&, std::span<const Tensor>>
GradCheckReport grad_check_report(const Op& op, std::span<const Tensor> inputs, const GradCheckOptions& options = {}) {
  return grad_check_report(Tensor64Fn([&](std::span<const Tensor64> t) { return op(t); }), inputs, options);
}
template <typename Op>
  requires std::is_invocable_v<const Op&, std::span<const Tensor>>
double grad_check(const Op& op, std::span<const Tensor> inputs, const GradCheckOptions& options = {}) {
  return grad_check_report(op, inputs, options).max_error;
}

}  // namespace pbsr
