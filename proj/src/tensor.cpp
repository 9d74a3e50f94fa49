#include "egoclust/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace egoclust {

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

thread_local bool t_grad_mode = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
void check_finite(const detail::Node<T>& node) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (T v : node.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") + node.op + "'");
    }
  }
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!t_grad_mode) return false;
  for (const auto* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Builds the output node. The gradient rule and inputs are only kept when
// some input participates in differentiation.
template <typename T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> data, std::vector<const Tensor<T>*> inputs,
                      std::function<void(detail::Node<T>&)> rule) {
  auto node = std::make_shared<detail::Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool track = false;
  if (t_grad_mode) {
    for (const auto* t : inputs) track = track || t->requires_grad();
  }
  if (track) {
    node->requires_grad = true;
    for (const auto* t : inputs) node->inputs.push_back(t->node_ptr());
    node->backward_fn = std::move(rule);
  }
  check_finite(*node);
  return Tensor<T>(std::move(node));
}

template <typename T>
std::vector<T>* grad_of(detail::Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  if (!in.requires_grad) return nullptr;
  return &in.ensure_grad();
}

void require(bool cond, const std::string& message) {
  if (!cond) throw ShapeError(message);
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary(const char* op, const Tensor<T>& a, Fwd fwd, Dfdx dfdx) {
  auto in = a.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result<T>(op, a.shape(), std::move(out), {&a}, [dfdx](detail::Node<T>& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    const auto& x = self.inputs[0]->data;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * dfdx(x[i], self.data[i]);
  });
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename T>
Tensor<T> binary(BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  const bool b_scalar = b.numel() == 1 && a.shape() != b.shape();
  require(a.shape() == b.shape() || b_scalar,
          "elementwise shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  const char* op = "add";
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T yi = b_scalar ? y[0] : y[i];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = x[i] + yi; break;
      case BinaryKind::kSub: out[i] = x[i] - yi; break;
      case BinaryKind::kMul: out[i] = x[i] * yi; break;
      case BinaryKind::kDiv: out[i] = x[i] / yi; break;
    }
  }
  switch (kind) {
    case BinaryKind::kAdd: op = "add"; break;
    case BinaryKind::kSub: op = "sub"; break;
    case BinaryKind::kMul: op = "mul"; break;
    case BinaryKind::kDiv: op = "div"; break;
  }
  return make_result<T>(op, a.shape(), std::move(out), {&a, &b}, [kind, b_scalar](detail::Node<T>& self) {
    auto* ga = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    const auto& g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t j = b_scalar ? 0 : i;
      switch (kind) {
        case BinaryKind::kAdd:
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[j] += g[i];
          break;
        case BinaryKind::kSub:
          if (ga) (*ga)[i] += g[i];
          if (gb) (*gb)[j] -= g[i];
          break;
        case BinaryKind::kMul:
          if (ga) (*ga)[i] += g[i] * y[j];
          if (gb) (*gb)[j] += g[i] * x[i];
          break;
        case BinaryKind::kDiv:
          if (ga) (*ga)[i] += g[i] / y[j];
          if (gb) (*gb)[j] -= g[i] * x[i] / (y[j] * y[j]);
          break;
      }
    }
  });
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks_enabled() { return g_finite_checks.load(); }

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }
bool grad_mode_enabled() { return t_grad_mode; }

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  require(egoclust::numel(shape) == data.size(),
          "data length " + std::to_string(data.size()) + " does not match shape " + to_string(shape));
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  const auto n = egoclust::numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = egoclust::numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return shape()[axis];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node().data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch");
  const auto strides = strides_of(s);
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= s[i]) throw ShapeError("index out of range");
    flat += v * strides[i++];
  }
  return node().data[flat];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool value) {
  if (!node().is_leaf()) throw Error("requires_grad can only be set on leaves");
  node().requires_grad = value;
}

template <typename T>
void Tensor<T>::zero_grad() {
  auto& g = node().grad;
  std::fill(g.begin(), g.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(shape(), to_vector(), false);
}

// ---- tape / backward -------------------------------------------------------

template <typename T>
ComputationTape<T>::ComputationTape(const Tensor<T>& root) {
  // Iterative post-order DFS: a node is emitted after all of its inputs.
  std::unordered_set<const detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  auto* start = root.node_ptr().get();
  stack.emplace_back(start, 0);
  seen.insert(start);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order_.push_back(node);
      stack.pop_back();
    }
  }
}

template <typename T>
void ComputationTape<T>::run_backward() const {
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    auto* node = *it;
    if (node->backward_fn && node->grad.size() == node->data.size()) node->backward_fn(*node);
  }
}

template <typename T>
void ComputationTape<T>::validate() const {
  std::unordered_set<const detail::Node<T>*> emitted;
  for (const auto* node : order_) {
    for (const auto& in : node->inputs) {
      if (!emitted.count(in.get())) throw Error("tape order violates topological invariant");
    }
    if (!emitted.insert(node).second) throw Error("tape visits a node twice");
  }
}

template <typename T>
void backward(const Tensor<T>& loss, BackwardOptions options) {
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw Error("backward on a tensor that does not require grad");
  ComputationTape<T> tape(loss);
  // Interior gradients from an earlier retained sweep must not leak in.
  for (auto* node : tape.nodes()) {
    if (!node->is_leaf()) node->grad.clear();
  }
  auto* root = loss.node_ptr().get();
  root->ensure_grad()[0] += T(1);
  tape.run_backward();
  if (!options.retain_graph) {
    for (auto* node : tape.nodes()) {
      if (node->is_leaf()) continue;
      node->inputs.clear();
      node->backward_fn = nullptr;
      node->grad.clear();
      node->grad.shrink_to_fit();
    }
  }
}

// ---- elementwise -----------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kAdd, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kSub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(BinaryKind::kMul, a, b); }

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.data()) {
    if (v == T(0)) throw DomainError("division by zero");
  }
  return binary(BinaryKind::kDiv, a, b);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (std::isnan(v)) throw NumericError("log of NaN");
    if (!(v > T(0))) throw DomainError("log of non-positive value " + std::to_string(v));
  }
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  for (T v : a.data()) {
    if (std::isnan(v)) throw NumericError("sqrt of NaN");
    if (v < T(0)) throw DomainError("sqrt of negative value " + std::to_string(v));
  }
  return unary<T>("sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T k = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T c = T(0.044715);
  return unary<T>(
      "gelu", a,
      [](T x) { return T(0.5) * x * (T(1) + std::tanh(k * (x + c * x * x * x))); },
      [](T x, T) {
        const T t = std::tanh(k * (x + c * x * x * x));
        return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * k * (T(1) + T(3) * c * x * x);
      });
}

template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T floor) {
  return unary<T>(
      "clamp_min", a, [floor](T x) { return x > floor ? x : floor; },
      [floor](T x, T) { return x > floor ? T(1) : T(0); });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  require(x.rank() >= 1 && bias.rank() == 1 && x.shape().back() == bias.dim(0),
          "add_bias shape mismatch: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  const std::size_t n = bias.dim(0);
  auto in = x.data();
  auto b = bias.data();
  std::vector<T> out(in.begin(), in.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  return make_result<T>("add_bias", x.shape(), std::move(out), {&x, &bias}, [n](detail::Node<T>& self) {
    auto* gx = grad_of(self, 0);
    auto* gb = grad_of(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (gx) (*gx)[i] += self.grad[i];
      if (gb) (*gb)[i % n] += self.grad[i];
    }
  });
}

// ---- linear algebra --------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Eigen::Map<const RowMat<T>> A(a.data().data(), m, k);
  Eigen::Map<const RowMat<T>> B(b.data().data(), k, n);
  Eigen::Map<RowMat<T>>(out.data(), m, n).noalias() = A * B;
  return make_result<T>("matmul", {a.dim(0), b.dim(1)}, std::move(out), {&a, &b}, [m, k, n](detail::Node<T>& self) {
    Eigen::Map<const RowMat<T>> G(self.grad.data(), m, n);
    if (auto* ga = grad_of(self, 0)) {
      Eigen::Map<const RowMat<T>> B(self.inputs[1]->data.data(), k, n);
      Eigen::Map<RowMat<T>>(ga->data(), m, k).noalias() += G * B.transpose();
    }
    if (auto* gb = grad_of(self, 1)) {
      Eigen::Map<const RowMat<T>> A(self.inputs[0]->data.data(), m, k);
      Eigen::Map<RowMat<T>>(gb->data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm dimension mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t batch = a.dim(0);
  const auto m = static_cast<Eigen::Index>(a.dim(1));
  const auto k = static_cast<Eigen::Index>(a.dim(2));
  const auto n = static_cast<Eigen::Index>(b.dim(2));
  std::vector<T> out(batch * static_cast<std::size_t>(m * n));
  for (std::size_t i = 0; i < batch; ++i) {
    Eigen::Map<const RowMat<T>> A(a.data().data() + i * m * k, m, k);
    Eigen::Map<const RowMat<T>> B(b.data().data() + i * k * n, k, n);
    Eigen::Map<RowMat<T>>(out.data() + i * m * n, m, n).noalias() = A * B;
  }
  return make_result<T>(
      "bmm", {batch, a.dim(1), b.dim(2)}, std::move(out), {&a, &b}, [batch, m, k, n](detail::Node<T>& self) {
        auto* ga = grad_of(self, 0);
        auto* gb = grad_of(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          Eigen::Map<const RowMat<T>> G(self.grad.data() + i * m * n, m, n);
          if (ga) {
            Eigen::Map<const RowMat<T>> B(self.inputs[1]->data.data() + i * k * n, k, n);
            Eigen::Map<RowMat<T>>(ga->data() + i * m * k, m, k).noalias() += G * B.transpose();
          }
          if (gb) {
            Eigen::Map<const RowMat<T>> A(self.inputs[0]->data.data() + i * m * k, m, k);
            Eigen::Map<RowMat<T>>(gb->data() + i * k * n, k, n).noalias() += A.transpose() * G;
          }
        }
      });
}

// ---- shape -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  require(numel(shape) == a.numel(), "reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  return make_result<T>("reshape", std::move(shape), a.to_vector(), {&a}, [](detail::Node<T>& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes) {
  const auto& in_shape = a.shape();
  const std::size_t r = in_shape.size();
  require(axes.size() == r, "permute axes rank mismatch");
  std::vector<bool> used(r, false);
  for (auto ax : axes) {
    require(ax < r && !used[ax], "permute axes must be a permutation");
    used[ax] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[axes[i]];
  const auto in_strides = strides_of(in_shape);
  // Source offset for each destination position.
  std::vector<std::size_t> src(a.numel());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < src.size(); ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_strides[axes[i]];
    src[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  auto in = a.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = in[src[i]];
  return make_result<T>("permute", std::move(out_shape), std::move(out), {&a},
                        [src = std::move(src)](detail::Node<T>& self) {
                          if (auto* ga = grad_of(self, 0)) {
                            for (std::size_t i = 0; i < src.size(); ++i) (*ga)[src[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require(a.rank() == 2, "transpose expects a matrix");
  return permute(a, {1, 0});
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
  require(axis < a.rank() && start + length <= a.dim(axis), "slice out of range");
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  auto in = a.data();
  std::vector<T> out;
  out.reserve(s.outer * length * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    const auto* base = in.data() + (o * s.extent + start) * s.inner;
    out.insert(out.end(), base, base + length * s.inner);
  }
  return make_result<T>("slice", std::move(out_shape), std::move(out), {&a}, [s, start, length](detail::Node<T>& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    std::size_t j = 0;
    for (std::size_t o = 0; o < s.outer; ++o) {
      auto* base = ga->data() + (o * s.extent + start) * s.inner;
      for (std::size_t i = 0; i < length * s.inner; ++i) base[i] += self.grad[j++];
    }
  });
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  require(!parts.empty(), "stack of zero tensors");
  const Shape& inner = parts.front().shape();
  std::vector<T> out;
  out.reserve(parts.size() * numel(inner));
  std::vector<const Tensor<T>*> inputs;
  for (const auto& p : parts) {
    require(p.shape() == inner, "stack shape mismatch");
    auto d = p.data();
    out.insert(out.end(), d.begin(), d.end());
    inputs.push_back(&p);
  }
  Shape out_shape{parts.size()};
  out_shape.insert(out_shape.end(), inner.begin(), inner.end());
  const std::size_t block = numel(inner);
  return make_result<T>("stack", std::move(out_shape), std::move(out), std::move(inputs),
                        [block](detail::Node<T>& self) {
                          for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                            if (auto* g = grad_of(self, p)) {
                              for (std::size_t i = 0; i < block; ++i) (*g)[i] += self.grad[p * block + i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows) {
  require(a.rank() == 2, "gather_rows expects a matrix");
  const std::size_t f = a.dim(1);
  auto in = a.data();
  std::vector<T> out;
  out.reserve(rows.size() * f);
  for (auto r : rows) {
    require(r < a.dim(0), "gather_rows index out of range");
    out.insert(out.end(), in.begin() + r * f, in.begin() + (r + 1) * f);
  }
  std::vector<std::size_t> index(rows.begin(), rows.end());
  return make_result<T>("gather_rows", {rows.size(), f}, std::move(out), {&a},
                        [index = std::move(index), f](detail::Node<T>& self) {
                          auto* ga = grad_of(self, 0);
                          if (!ga) return;
                          for (std::size_t i = 0; i < index.size(); ++i) {
                            for (std::size_t c = 0; c < f; ++c) (*ga)[index[i] * f + c] += self.grad[i * f + c];
                          }
                        });
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& rows, std::span<const std::size_t> index, std::size_t num_rows) {
  require(rows.rank() == 2 && rows.dim(0) == index.size(), "scatter_rows index count mismatch");
  const std::size_t f = rows.dim(1);
  std::vector<T> out(num_rows * f, T(0));
  std::vector<bool> hit(num_rows, false);
  auto in = rows.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < num_rows && !hit[index[i]], "scatter_rows indices must be distinct and in range");
    hit[index[i]] = true;
    std::copy(in.begin() + i * f, in.begin() + (i + 1) * f, out.begin() + index[i] * f);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result<T>("scatter_rows", {num_rows, f}, std::move(out), {&rows},
                        [idx = std::move(idx), f](detail::Node<T>& self) {
                          auto* gr = grad_of(self, 0);
                          if (!gr) return;
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            for (std::size_t c = 0; c < f; ++c) (*gr)[i * f + c] += self.grad[idx[i] * f + c];
                          }
                        });
}

template <typename T>
Tensor<T> repeat_row(const Tensor<T>& v, std::size_t count) {
  require(v.rank() == 1, "repeat_row expects a vector");
  const std::size_t f = v.dim(0);
  auto in = v.data();
  std::vector<T> out;
  out.reserve(count * f);
  for (std::size_t i = 0; i < count; ++i) out.insert(out.end(), in.begin(), in.end());
  return make_result<T>("repeat_row", {count, f}, std::move(out), {&v}, [f](detail::Node<T>& self) {
    auto* gv = grad_of(self, 0);
    if (!gv) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*gv)[i % f] += self.grad[i];
  });
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  return make_result<T>("sum", {}, {total}, {&a}, [](detail::Node<T>& self) {
    if (auto* ga = grad_of(self, 0)) {
      for (auto& g : *ga) g += self.grad[0];
    }
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank(), "sum_axis axis out of range");
  const auto s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[axis] = 1;
  } else {
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  auto in = a.data();
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += in[(o * s.extent + e) * s.inner + i];
  return make_result<T>("sum_axis", std::move(out_shape), std::move(out), {&a}, [s](detail::Node<T>& self) {
    auto* ga = grad_of(self, 0);
    if (!ga) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e)
        for (std::size_t i = 0; i < s.inner; ++i) (*ga)[(o * s.extent + e) * s.inner + i] += self.grad[o * s.inner + i];
  });
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim) {
  const auto extent = a.dim(axis);
  require(extent > 0, "mean over empty axis");
  return scale(sum_axis(a, axis, keepdim), T(1) / static_cast<T>(extent));
}

// ---- nn --------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "softmax axis out of range");
  const auto s = split_at(x.shape(), axis);
  auto in = x.data();
  std::vector<T> out(in.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = in[base];
      for (std::size_t e = 1; e < s.extent; ++e) mx = std::max(mx, in[base + e * s.inner]);
      T total = T(0);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(in[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  return make_result<T>("softmax", x.shape(), std::move(out), {&x}, [s](detail::Node<T>& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        T dot = T(0);
        for (std::size_t e = 0; e < s.extent; ++e) dot += g[base + e * s.inner] * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t j = base + e * s.inner;
          (*gx)[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require(x.rank() >= 1 && x.shape().back() >= 1, "layernorm needs a non-empty last axis");
  const std::size_t n = x.shape().back();
  require(gain.rank() == 1 && gain.dim(0) == n && bias.rank() == 1 && bias.dim(0) == n,
          "layernorm affine parameters must match the last axis");
  const std::size_t rows = x.numel() / n;
  auto in = x.data();
  auto gv = gain.data();
  auto bv = bias.data();
  std::vector<T> xhat(in.size());
  std::vector<T> inv_std(rows);
  std::vector<T> out(in.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * n;
    T mu = T(0);
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (row[c] - mu) * inv_std[r];
      out[r * n + c] = xhat[r * n + c] * gv[c] + bv[c];
    }
  }
  return make_result<T>(
      "layernorm", x.shape(), std::move(out), {&x, &gain, &bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, rows](detail::Node<T>& self) {
        auto* gx = grad_of(self, 0);
        auto* gg = grad_of(self, 1);
        auto* gb = grad_of(self, 2);
        const auto& gain_v = self.inputs[1]->data;
        const auto& g = self.grad;
        for (std::size_t r = 0; r < rows; ++r) {
          T mean_d = T(0);
          T mean_dx = T(0);
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g[r * n + c] * gain_v[c];
            mean_d += d;
            mean_dx += d * xhat[r * n + c];
            if (gg) (*gg)[c] += g[r * n + c] * xhat[r * n + c];
            if (gb) (*gb)[c] += g[r * n + c];
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g[r * n + c] * gain_v[c];
            (*gx)[r * n + c] += inv_std[r] * (d - mean_d - xhat[r * n + c] * mean_dx);
          }
        }
      });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2 && logits.dim(0) == labels.size() && logits.dim(0) > 0,
          "softmax_cross_entropy expects logits[n, K] with n labels");
  const std::size_t n = logits.dim(0);
  const std::size_t k = logits.dim(1);
  auto in = logits.data();
  std::vector<T> prob(in.size());
  T loss = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    require(labels[r] >= 0 && static_cast<std::size_t>(labels[r]) < k, "label out of range");
    const T* row = in.data() + r * k;
    const T mx = *std::max_element(row, row + k);
    T total = T(0);
    for (std::size_t c = 0; c < k; ++c) {
      prob[r * k + c] = std::exp(row[c] - mx);
      total += prob[r * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) prob[r * k + c] /= total;
    loss -= row[labels[r]] - mx - std::log(total);
  }
  loss /= static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<T>("softmax_cross_entropy", {}, {loss}, {&logits},
                        [prob = std::move(prob), lab = std::move(lab), n, k](detail::Node<T>& self) {
                          auto* gl = grad_of(self, 0);
                          if (!gl) return;
                          const T g = self.grad[0] / static_cast<T>(n);
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t c = 0; c < k; ++c) {
                              const T target = static_cast<int>(c) == lab[r] ? T(1) : T(0);
                              (*gl)[r * k + c] += g * (prob[r * k + c] - target);
                            }
                          }
                        });
}

// ---- gradient checking -----------------------------------------------------

template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs, T h,
                                  double floor) {
  for (auto& x : inputs) {
    x.mutable_grad();
    x.zero_grad();
  }
  {
    auto loss = f();
    backward(loss);
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (auto& x : inputs) {
    std::vector<T> analytic(x.grad().begin(), x.grad().end());
    auto values = x.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T original = values[i];
      const T step = h * std::max(T(1), std::abs(original));
      // Four-point stencil. The weights are the derivative at x of the cubic
      // through the sampled points, built from the offsets as actually
      // represented, so rounding of x +- h in float does not bias the result.
      const std::array<T, 4> points{original - 2 * step, original - step, original + step, original + 2 * step};
      std::array<double, 4> offset{};
      std::array<double, 4> value{};
      for (std::size_t k = 0; k < 4; ++k) {
        values[i] = points[k];
        offset[k] = static_cast<double>(points[k]) - static_cast<double>(original);
        value[k] = static_cast<double>(f().item());
      }
      values[i] = original;
      double numeric = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        double denom = 1.0;
        double numer = 0.0;
        for (std::size_t j = 0; j < 4; ++j) {
          if (j == k) continue;
          denom *= offset[k] - offset[j];
          double term = 1.0;
          for (std::size_t m = 0; m < 4; ++m) {
            if (m != k && m != j) term *= -offset[m];
          }
          numer += term;
        }
        numeric += value[k] * numer / denom;
      }
      const double a = static_cast<double>(analytic[i]);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.coordinates;
    }
  }
  return result;
}

// ---- instantiation ---------------------------------------------------------

#define EGOCLUST_INSTANTIATE(T)                                                                                 \
  template class Tensor<T>;                                                                                     \
  template class ComputationTape<T>;                                                                            \
  template void backward<T>(const Tensor<T>&, BackwardOptions);                                                 \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                        \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                             \
  template Tensor<T> neg<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> log<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> sqrt<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> square<T>(const Tensor<T>&);                                                               \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> clamp_min<T>(const Tensor<T>&, T);                                                         \
  template Tensor<T> add_bias<T>(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> bmm<T>(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<std::size_t>&);                             \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                            \
  template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                         \
  template Tensor<T> stack<T>(const std::vector<Tensor<T>>&);                                                   \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, std::span<const std::size_t>);                            \
  template Tensor<T> scatter_rows<T>(const Tensor<T>&, std::span<const std::size_t>, std::size_t);              \
  template Tensor<T> repeat_row<T>(const Tensor<T>&, std::size_t);                                              \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                                  \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> sum_axis<T>(const Tensor<T>&, std::size_t, bool);                                          \
  template Tensor<T> mean_axis<T>(const Tensor<T>&, std::size_t, bool);                                         \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                                 \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                     \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);                          \
  template GradCheckResult finite_diff_check<T>(const std::function<Tensor<T>()>&, std::vector<Tensor<T>>, T, \
                                                double);

EGOCLUST_INSTANTIATE(float)
EGOCLUST_INSTANTIATE(double)

#undef EGOCLUST_INSTANTIATE

}  // namespace egoclust
