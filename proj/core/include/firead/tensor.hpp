#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "firead/rng.hpp"

namespace firead {

/// Extents of a rank-4 (N, C, H, W) tensor. Vectors are carried as (N, C, 1, 1).
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  /// Product of extents; throws SizeError on overflow or ShapeError on a negative extent.
  std::int64_t numel() const;
  std::int64_t plane() const { return h * w; }
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

enum class Mode { train, infer };

enum class UnaryKind { relu, sigmoid, silu, softplus };
enum class BinaryKind { add, mul };
enum class ReduceKind { sum, mean };

/// Bitmask of axes for reductions.
namespace axis {
inline constexpr unsigned n = 1u;
inline constexpr unsigned c = 2u;
inline constexpr unsigned h = 4u;
inline constexpr unsigned w = 8u;
inline constexpr unsigned hw = h | w;
inline constexpr unsigned all = n | c | h | w;
}  // namespace axis

namespace detail {

/// Scalar used for reductions over T: at least double.
template <typename T>
using accum_t = std::common_type_t<T, double>;

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  // Recorded graph: producers of this node and the rule that pushes this
  // node's grad into them. Cleared after backward.
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

/// Dense rank-4 array with optional reverse-mode gradient tracking.
///
/// A Tensor is a handle: copies share storage and gradient. Results of
/// operations are new tensors; only parameter updates and gradient
/// accumulation write into existing storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = detail::Node<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, T value);
  /// Fills in row-major order with draws from `rng`.
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);
  /// Uniform in ±sqrt(6 / fan_in).
  static Tensor kaiming(Shape shape, std::int64_t fan_in, Rng& rng);
  static Tensor from_data(Shape shape, std::vector<T> values);
  static Tensor scalar(T value) { return constant({1, 1, 1, 1}, value); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }
  /// Empty when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (node_->requires_grad)
      node_->grad.assign(node_->data.size(), T(0));
    else
      node_->grad.clear();
  }

  bool requires_grad() const { return node_->requires_grad; }
  /// Marks a leaf as trainable. Gradient storage is allocated (zeroed) eagerly.
  Tensor& set_requires_grad(bool on);

  T item() const;
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const Shape& s = node_->shape;
    return node_->data[static_cast<std::size_t>(((n * s.c + c) * s.h + h) * s.w + w)];
  }

  /// Graph-free copy of the values.
  Tensor detach() const { return from_data(shape(), node_->data); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return Tensor<U>::from_data(shape(), std::move(out));
  }

  const void* id() const noexcept { return node_.get(); }
  Node* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled() noexcept;

namespace detail {

/// Builds an op result. When grad mode is on and any input tracks gradients
/// the result records `inputs` and `backward`; otherwise both are dropped.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward);

/// Test hook: when set, conv2d reports a slightly wrong weight gradient.
void set_backward_fault(bool on) noexcept;
bool backward_fault() noexcept;

}  // namespace detail

template <typename T>
Tensor<T> unary(const Tensor<T>& x, UnaryKind kind);
template <typename T>
Tensor<T> relu(const Tensor<T>& x) { return unary(x, UnaryKind::relu); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return unary(x, UnaryKind::sigmoid); }
template <typename T>
Tensor<T> silu(const Tensor<T>& x) { return unary(x, UnaryKind::silu); }
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return unary(x, UnaryKind::softplus); }

/// y = scale * x + shift with constant scale/shift.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift);

/// Elementwise a (op) b. `b` may equal a's shape, be (N, C, 1, 1) with a's N
/// and C (per-channel broadcast), or be (1, 1, 1, 1) (scalar broadcast).
template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind);
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::add); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinaryKind::mul); }

/// Reduced axes keep extent 1.
template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, unsigned axes);
template <typename T>
Tensor<T> sum(const Tensor<T>& x) { return reduce(x, ReduceKind::sum, axis::all); }
template <typename T>
Tensor<T> mean(const Tensor<T>& x) { return reduce(x, ReduceKind::mean, axis::all); }

/// Channels [begin, end) of x.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t end);

/// Reverse pass from a (1,1,1,1) loss. Gradients accumulate into every
/// reachable tensor that requires grad; calling twice without zero_grad adds.
/// The recorded graph is released afterwards.
template <typename T>
void backward(const Tensor<T>& loss);

#define FIREAD_EXTERN_TENSOR(T)                                                        \
  extern template class Tensor<T>;                                                     \
  extern template Tensor<T> unary(const Tensor<T>&, UnaryKind);                        \
  extern template Tensor<T> affine(const Tensor<T>&, T, T);                            \
  extern template Tensor<T> binary(const Tensor<T>&, const Tensor<T>&, BinaryKind);    \
  extern template Tensor<T> reduce(const Tensor<T>&, ReduceKind, unsigned);            \
  extern template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t); \
  extern template void backward(const Tensor<T>&);

FIREAD_EXTERN_TENSOR(float)
FIREAD_EXTERN_TENSOR(double)
FIREAD_EXTERN_TENSOR(long double)
#undef FIREAD_EXTERN_TENSOR

}  // namespace firead
