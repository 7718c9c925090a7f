#include "firead/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "firead/errors.hpp"

namespace firead {

std::int64_t Shape::numel() const {
  const std::int64_t ext[4] = {n, c, h, w};
  std::int64_t total = 1;
  for (std::int64_t e : ext) {
    if (e < 0) throw ShapeError("negative extent in shape " + str());
    if (e != 0 && total > std::numeric_limits<std::int64_t>::max() / e)
      throw SizeError("element count overflows for shape " + str());
    total *= e;
  }
  return total;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;
std::atomic<bool> g_backward_fault{false};

template <typename T>
std::vector<T> checked_buffer(const Shape& shape, T fill) {
  const std::int64_t count = shape.numel();
  if (static_cast<std::uint64_t>(count) > std::vector<T>().max_size())
    throw SizeError("tensor too large: " + shape.str());
  return std::vector<T>(static_cast<std::size_t>(count), fill);
}

template <typename T>
T sigmoid_scalar(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

template <typename T>
T softplus_scalar(T z) {
  return std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() noexcept { return g_grad_enabled; }

namespace detail {

void set_backward_fault(bool on) noexcept { g_backward_fault.store(on); }
bool backward_fault() noexcept { return g_backward_fault.load(); }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<std::shared_ptr<Node<T>>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(data);
  if (g_grad_enabled) {
    const bool track = std::any_of(inputs.begin(), inputs.end(),
                                   [](const auto& in) { return in && in->requires_grad; });
    if (track) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, std::vector<std::shared_ptr<Node<float>>>,
                                   std::function<void(Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::vector<std::shared_ptr<Node<double>>>,
                                    std::function<void(Node<double>&)>);
template Tensor<long double> make_result(Shape, std::vector<long double>,
                                         std::vector<std::shared_ptr<Node<long double>>>,
                                         std::function<void(Node<long double>&)>);

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return constant(shape, T(0));
}

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, T value) {
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = checked_buffer<T>(shape, value);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, double lo, double hi, Rng& rng) {
  if (!(lo <= hi)) throw ContractError("uniform init requires lo <= hi");
  Tensor t = zeros(shape);
  for (T& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::kaiming(Shape shape, std::int64_t fan_in, Rng& rng) {
  if (fan_in <= 0) throw ContractError("kaiming init requires fan_in > 0");
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return uniform(shape, -bound, bound, rng);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> values) {
  if (static_cast<std::int64_t>(values.size()) != shape.numel())
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " + shape.str());
  auto node = std::make_shared<Node>();
  node->shape = shape;
  node->data = std::move(values);
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on)
    node_->ensure_grad();
  else
    node_->grad.clear();
  return *this;
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->data.size() != 1) throw ContractError("item() on tensor of shape " + shape().str());
  return node_->data[0];
}

template <typename T>
Tensor<T> unary(const Tensor<T>& x, UnaryKind kind) {
  const auto& in = x.data();
  std::vector<T> out(in.size());
  switch (kind) {
    case UnaryKind::relu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T(0) ? in[i] : T(0);
      break;
    case UnaryKind::sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid_scalar(in[i]);
      break;
    case UnaryKind::silu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * sigmoid_scalar(in[i]);
      break;
    case UnaryKind::softplus:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus_scalar(in[i]);
      break;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [kind](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    const std::size_t count = y.data.size();
    switch (kind) {
      case UnaryKind::relu:
        // Subgradient 0 at the kink.
        for (std::size_t i = 0; i < count; ++i)
          if (xn.data[i] > T(0)) xn.grad[i] += y.grad[i];
        break;
      case UnaryKind::sigmoid:
        for (std::size_t i = 0; i < count; ++i) xn.grad[i] += y.grad[i] * y.data[i] * (T(1) - y.data[i]);
        break;
      case UnaryKind::silu:
        for (std::size_t i = 0; i < count; ++i) {
          const T s = sigmoid_scalar(xn.data[i]);
          xn.grad[i] += y.grad[i] * s * (T(1) + xn.data[i] * (T(1) - s));
        }
        break;
      case UnaryKind::softplus:
        for (std::size_t i = 0; i < count; ++i) xn.grad[i] += y.grad[i] * sigmoid_scalar(xn.data[i]);
        break;
    }
  });
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  const auto& in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = scale * in[i] + shift;
  return detail::make_result<T>(x.shape(), std::move(out), {x.node_ptr()}, [scale](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    for (std::size_t i = 0; i < y.grad.size(); ++i) xn.grad[i] += scale * y.grad[i];
  });
}

namespace {

enum class Broadcast { none, channel, scalar };

Broadcast classify(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::none;
  if (b.n == a.n && b.c == a.c && b.h == 1 && b.w == 1) return Broadcast::channel;
  if (b == Shape{1, 1, 1, 1}) return Broadcast::scalar;
  throw ShapeError("incompatible shapes for elementwise op: " + a.str() + " and " + b.str());
}

}  // namespace

template <typename T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Shape& sa = a.shape();
  const Broadcast bc = classify(sa, b.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  const std::size_t plane = static_cast<std::size_t>(sa.plane());
  std::vector<T> out(av.size());
  auto b_index = [bc, plane](std::size_t i) -> std::size_t {
    switch (bc) {
      case Broadcast::none: return i;
      case Broadcast::channel: return i / plane;
      case Broadcast::scalar: return 0;
    }
    return 0;
  };
  if (kind == BinaryKind::add) {
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[b_index(i)];
  } else {
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[b_index(i)];
  }
  return detail::make_result<T>(sa, std::move(out), {a.node_ptr(), b.node_ptr()},
                                [kind, bc, plane](detail::Node<T>& y) {
    auto& an = *y.inputs[0];
    auto& bn = *y.inputs[1];
    auto bi = [bc, plane](std::size_t i) -> std::size_t {
      return bc == Broadcast::none ? i : bc == Broadcast::channel ? i / plane : 0;
    };
    const std::size_t count = y.grad.size();
    if (an.requires_grad) {
      an.ensure_grad();
      if (kind == BinaryKind::add)
        for (std::size_t i = 0; i < count; ++i) an.grad[i] += y.grad[i];
      else
        for (std::size_t i = 0; i < count; ++i) an.grad[i] += y.grad[i] * bn.data[bi(i)];
    }
    if (bn.requires_grad) {
      bn.ensure_grad();
      // Broadcast axes are summed.
      if (kind == BinaryKind::add)
        for (std::size_t i = 0; i < count; ++i) bn.grad[bi(i)] += y.grad[i];
      else
        for (std::size_t i = 0; i < count; ++i) bn.grad[bi(i)] += y.grad[i] * an.data[i];
    }
  });
}

template <typename T>
Tensor<T> reduce(const Tensor<T>& x, ReduceKind kind, unsigned axes) {
  if ((axes & axis::all) == 0) throw ContractError("reduce requires at least one axis");
  const Shape& s = x.shape();
  const Shape o{(axes & axis::n) ? 1 : s.n, (axes & axis::c) ? 1 : s.c, (axes & axis::h) ? 1 : s.h,
                (axes & axis::w) ? 1 : s.w};
  std::int64_t reduced = 1;
  if (axes & axis::n) reduced *= s.n;
  if (axes & axis::c) reduced *= s.c;
  if (axes & axis::h) reduced *= s.h;
  if (axes & axis::w) reduced *= s.w;
  if (kind == ReduceKind::mean && reduced == 0) throw ContractError("mean over a zero-extent axis");
  const T scale = kind == ReduceKind::mean ? T(1) / static_cast<T>(reduced) : T(1);

  // Maps an input flat index to its output flat index.
  auto target = [s, o](std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return (((o.n == 1 ? 0 : n) * o.c + (o.c == 1 ? 0 : c)) * o.h + (o.h == 1 ? 0 : h)) * o.w + (o.w == 1 ? 0 : w);
  };
  std::vector<T> out(static_cast<std::size_t>(o.numel()), T(0));
  const auto& in = x.data();
  std::size_t i = 0;
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t c = 0; c < s.c; ++c)
      for (std::int64_t h = 0; h < s.h; ++h)
        for (std::int64_t w = 0; w < s.w; ++w) out[static_cast<std::size_t>(target(n, c, h, w))] += in[i++];
  if (kind == ReduceKind::mean)
    for (T& v : out) v *= scale;

  return detail::make_result<T>(o, std::move(out), {x.node_ptr()}, [s, target, scale](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    std::size_t i = 0;
    for (std::int64_t n = 0; n < s.n; ++n)
      for (std::int64_t c = 0; c < s.c; ++c)
        for (std::int64_t h = 0; h < s.h; ++h)
          for (std::int64_t w = 0; w < s.w; ++w)
            xn.grad[i++] += scale * y.grad[static_cast<std::size_t>(target(n, c, h, w))];
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::int64_t begin, std::int64_t end) {
  const Shape& s = x.shape();
  if (begin < 0 || end > s.c || begin > end)
    throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
                     s.str());
  const Shape o{s.n, end - begin, s.h, s.w};
  const std::size_t plane = static_cast<std::size_t>(s.plane());
  const std::size_t span = static_cast<std::size_t>(end - begin) * plane;
  std::vector<T> out(static_cast<std::size_t>(o.numel()));
  const auto& in = x.data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    const std::size_t src = (static_cast<std::size_t>(n * s.c + begin)) * plane;
    std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(src), span,
                out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(n) * span));
  }
  return detail::make_result<T>(o, std::move(out), {x.node_ptr()}, [s, begin, plane, span](detail::Node<T>& y) {
    auto& xn = *y.inputs[0];
    if (!xn.requires_grad) return;
    xn.ensure_grad();
    for (std::int64_t n = 0; n < s.n; ++n) {
      const std::size_t src = (static_cast<std::size_t>(n * s.c + begin)) * plane;
      for (std::size_t k = 0; k < span; ++k) xn.grad[src + k] += y.grad[static_cast<std::size_t>(n) * span + k];
    }
  });
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.shape() != Shape{1, 1, 1, 1})
    throw ContractError("backward requires a (1,1,1,1) loss, got " + loss.shape().str());
  using Node = detail::Node<T>;
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
  for (Node* node : order) {
    if (node->backward) {
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

#define FIREAD_INSTANTIATE_TENSOR(T)                                                   \
  template class Tensor<T>;                                                            \
  template Tensor<T> unary(const Tensor<T>&, UnaryKind);                               \
  template Tensor<T> affine(const Tensor<T>&, T, T);                                   \
  template Tensor<T> binary(const Tensor<T>&, const Tensor<T>&, BinaryKind);           \
  template Tensor<T> reduce(const Tensor<T>&, ReduceKind, unsigned);                   \
  template Tensor<T> slice_channels(const Tensor<T>&, std::int64_t, std::int64_t);     \
  template void backward(const Tensor<T>&);

FIREAD_INSTANTIATE_TENSOR(float)
FIREAD_INSTANTIATE_TENSOR(double)
FIREAD_INSTANTIATE_TENSOR(long double)

}  // namespace firead
