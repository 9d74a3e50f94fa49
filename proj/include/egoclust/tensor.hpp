#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace egoclust {

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Per-op NaN/Inf detection. Defaults to on in debug builds and off when NDEBUG
// is defined; tests may flip it at runtime.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor with optional reverse-mode gradient tracking.
///
/// A Tensor is a cheap handle; copies share the underlying node. Values are
/// immutable after the producing op returns except through mutable_data(),
/// which is reserved for leaves (parameter init, optimizer updates, finite
/// difference probes).
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node().shape; }
  std::size_t rank() const { return node().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  std::span<T> mutable_data() { return node().data; }
  std::vector<T> to_vector() const { return node().data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool value);
  bool has_grad() const { return node().grad.size() == node().data.size() && !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node().ensure_grad(); }
  void zero_grad();

  const char* op_name() const { return node().op; }
  const NodePtr& node_ptr() const { return node_; }
  const void* id() const { return node_.get(); }

  /// Returns a leaf with copied data and no history.
  Tensor detach() const;

 private:
  detail::Node<T>& node() const {
    if (!node_) throw Error("use of undefined tensor");
    return *node_;
  }
  NodePtr node_;
};

/// Topologically ordered view of the graph that produced a tensor.
/// Every node appears once and after all of its inputs.
template <typename T>
class ComputationTape {
 public:
  explicit ComputationTape(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<detail::Node<T>*>& nodes() const { return order_; }
  // Reverse sweep; each recorded node's gradient rule runs exactly once.
  void run_backward() const;
  // Throws if the topological invariant is violated.
  void validate() const;

 private:
  std::vector<detail::Node<T>*> order_;
};

struct BackwardOptions {
  bool retain_graph = false;
};

/// Seeds d(loss)/d(loss) = 1 and propagates into every requires_grad leaf.
/// Gradients accumulate; call zero_grad() between steps.
template <typename T>
void backward(const Tensor<T>& loss, BackwardOptions options = {});

// ---- elementwise ---------------------------------------------------------

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> clamp_min(const Tensor<T>& a, T floor);

// x[..., n] + bias[n]
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// ---- linear algebra ------------------------------------------------------

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// a[B, m, k] x b[B, k, n] -> [B, m, n]
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

// ---- shape ---------------------------------------------------------------

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& axes);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);  // 2-D
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T> Tensor<T> stack(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> gather_rows(const Tensor<T>& a, std::span<const std::size_t> rows);
// rows[k, F] placed at the given row indices of a zero [num_rows, F] matrix.
template <typename T> Tensor<T> scatter_rows(const Tensor<T>& rows, std::span<const std::size_t> index, std::size_t num_rows);
// v[F] -> [count, F]
template <typename T> Tensor<T> repeat_row(const Tensor<T>& v, std::size_t count);

// ---- reductions ----------------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false);
template <typename T> Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis, bool keepdim = false);

// ---- nn ------------------------------------------------------------------

template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Normalizes over the last axis; gain and bias have the last-axis length.
template <typename T> Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
// Mean softmax cross-entropy of logits[n, K] against integer labels.
template <typename T> Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// ---- gradient checking ---------------------------------------------------

struct GradCheckResult {
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares backward() against a fourth-order central difference over
/// x +- h, x +- 2h for every coordinate of every tensor in `inputs`. The step
/// per coordinate is h * max(1, |x_i|). Relative error uses max(|analytic|, |numeric|, floor) as
/// the denominator.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs, T h,
                                  double floor = 1e-8);

}  // namespace egoclust
