#include "egoclust/tensor.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace egoclust;
using testing::random_tensor;

namespace {

using T64 = Tensor<double>;

// Naive triple loop; the library routes matmul through Eigen.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  const auto a = T64::from_data({3}, {1.0, 2.0, 4.0});
  const auto b = T64::from_data({3}, {0.5, -1.0, 2.0});
  CHECK(add(a, b).to_vector() == std::vector<double>{1.5, 1.0, 6.0});
  CHECK(sub(a, b).to_vector() == std::vector<double>{0.5, 3.0, 2.0});
  CHECK(mul(a, b).to_vector() == std::vector<double>{0.5, -2.0, 8.0});
  CHECK(div(a, b).to_vector() == std::vector<double>{2.0, -2.0, 2.0});
  CHECK(square(b).to_vector() == std::vector<double>{0.25, 1.0, 4.0});
  CHECK(clamp_min(b, 0.0).to_vector() == std::vector<double>{0.5, 0.0, 2.0});
  CHECK(sqrt(a).at({2}) == 2.0);
  CHECK(log(a).at({0}) == 0.0);
  // scalar operand broadcasts
  CHECK(mul(a, T64::scalar(2.0)).to_vector() == std::vector<double>{2.0, 4.0, 8.0});
}

TEST_CASE("gelu uses the tanh approximation") {
  const auto x = T64::from_data({2}, {0.0, 1.0});
  const double expected = 0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (1.0 + 0.044715)));
  CHECK(gelu(x).at({0}) == 0.0);
  CHECK(gelu(x).at({1}) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("domain and shape errors") {
  const auto a = T64::from_data({2}, {1.0, -1.0});
  CHECK_THROWS_AS(log(a), DomainError);
  CHECK_THROWS_AS(sqrt(a), DomainError);
  CHECK_THROWS_AS(log(T64::from_data({1}, {0.0})), DomainError);
  CHECK_THROWS_AS(div(a, T64::from_data({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(add(a, T64::zeros({3})), ShapeError);
  CHECK_THROWS_AS(matmul(T64::zeros({2, 3}), T64::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(reshape(a, {3}), ShapeError);
  CHECK_THROWS_AS(T64::from_data({2, 2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(backward(add(a, a)), ShapeError);  // non-scalar loss
}

TEST_CASE("matmul and bmm agree with a naive loop") {
  std::mt19937_64 rng(3);
  const auto a = random_tensor<double>({4, 5}, rng);
  const auto b = random_tensor<double>({5, 3}, rng);
  const auto c = matmul(a, b).to_vector();
  const auto ref = naive_matmul(a.to_vector(), b.to_vector(), 4, 5, 3);
  for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-14));

  const auto ba = random_tensor<double>({2, 3, 4}, rng);
  const auto bb = random_tensor<double>({2, 4, 2}, rng);
  const auto bc = bmm(ba, bb);
  for (std::size_t batch = 0; batch < 2; ++batch) {
    const auto sa = reshape(slice(ba, 0, batch, 1), {3, 4}).to_vector();
    const auto sb = reshape(slice(bb, 0, batch, 1), {4, 2}).to_vector();
    const auto r = naive_matmul(sa, sb, 3, 4, 2);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 2; ++j) CHECK(bc.at({batch, i, j}) == doctest::Approx(r[i * 2 + j]));
  }
}

TEST_CASE("permute moves axes") {
  std::vector<double> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const auto x = T64::from_data({2, 3, 4}, v);
  const auto y = permute(x, {2, 0, 1});
  REQUIRE(y.shape() == Shape{4, 2, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 4; ++k) CHECK(y.at({k, i, j}) == x.at({i, j, k}));
}

TEST_CASE("softmax, layernorm and cross-entropy against direct formulas") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({3, 4}, rng, -3.0, 3.0);
  const auto s = softmax(x, 1);
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 4; ++j) z += std::exp(x.at({i, j}));
    double total = 0.0;
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(s.at({i, j}) == doctest::Approx(std::exp(x.at({i, j})) / z).epsilon(1e-14));
      total += s.at({i, j});
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-15));
  }

  const auto ln = layernorm(x, T64::full({4}, 1.0), T64::zeros({4}), 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 4; ++j) mu += ln.at({i, j}) / 4.0;
    for (std::size_t j = 0; j < 4; ++j) var += (ln.at({i, j}) - mu) * (ln.at({i, j}) - mu) / 4.0;
    CHECK(std::abs(mu) < 1e-14);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
  }

  const std::vector<int> labels{0, 3, 1};
  double ref = 0.0;
  for (std::size_t i = 0; i < 3; ++i) ref -= std::log(s.at({i, static_cast<std::size_t>(labels[i])})) / 3.0;
  CHECK(softmax_cross_entropy(x, std::span<const int>(labels)).item() == doctest::Approx(ref).epsilon(1e-13));
  const std::vector<int> bad{0, 4, 1};
  CHECK_THROWS(softmax_cross_entropy(x, std::span<const int>(bad)));
}

TEST_CASE("shared subexpressions accumulate gradients once per use") {
  const auto x = T64::from_data({1}, {3.0}, true);
  const auto a = mul(x, x);       // used twice below
  const auto y = sum(add(a, a));  // 2x^2
  ComputationTape<double> tape(y);
  tape.validate();
  // x, a, add, sum: every node exactly once
  CHECK(tape.size() == 4);
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
}

TEST_CASE("backward frees the graph unless retained") {
  const auto x = T64::from_data({2}, {1.0, 2.0}, true);
  auto y = sum(square(x));
  backward(y, {.retain_graph = true});
  backward(y, {.retain_graph = true});
  CHECK(x.grad()[1] == doctest::Approx(8.0));  // accumulated twice
  backward(y);
  CHECK(ComputationTape<double>(y).size() == 1);
}

TEST_CASE("no-grad mode records nothing") {
  const auto x = T64::from_data({2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  CHECK_FALSE(grad_mode_enabled());
  const auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(ComputationTape<double>(y).size() == 1);
}

TEST_CASE("finite checks flag non-finite results") {
  const bool before = finite_checks_enabled();
  set_finite_checks(true);
  const auto big = T64::from_data({1}, {1000.0});
  CHECK_THROWS_AS(exp(big), NumericError);
  set_finite_checks(false);
  CHECK(std::isinf(exp(big).item()));
  set_finite_checks(before);
}

TEST_CASE("detach cuts history and leaves are the only settable nodes") {
  const auto x = T64::from_data({1}, {2.0}, true);
  auto y = mul(x, x);
  CHECK_THROWS(y.set_requires_grad(false));
  const auto d = y.detach();
  CHECK(d.op_name() == std::string("leaf"));
  CHECK_FALSE(d.requires_grad());
  CHECK(d.item() == 4.0);
}

TEST_CASE("scatter and gather rows are inverse on the chosen rows") {
  std::mt19937_64 rng(9);
  const auto rows = random_tensor<double>({2, 3}, rng);
  const std::vector<std::size_t> idx{3, 1};
  const auto full = scatter_rows(rows, std::span<const std::size_t>(idx), 5);
  CHECK(gather_rows(full, std::span<const std::size_t>(idx)).to_vector() == rows.to_vector());
  CHECK(sum(square(gather_rows(full, std::span<const std::size_t>(std::vector<std::size_t>{0, 2, 4})))).item() == 0.0);
  const std::vector<std::size_t> dup{1, 1};
  CHECK_THROWS(scatter_rows(rows, std::span<const std::size_t>(dup), 5));
}
