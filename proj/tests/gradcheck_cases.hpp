#pragma once

#include "support.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace testing {

template <typename T>
struct GradTolerance {
  T step;
  double floor;  // denominator floor of the relative error
  double rel;
};

// Float: a larger step keeps the rounding error of f(x +- h) in check; the
// fourth-order stencil keeps the truncation error of that step small. The
// floor stops near-zero gradients from dominating the relative error.
template <typename T>
GradTolerance<T> grad_tolerance() {
  if constexpr (std::is_same_v<T, double>) {
    return {T(1e-5), 1e-6, 1e-4};
  } else {
    return {T(2e-2), 1e-2, 1e-3};
  }
}

template <typename T>
struct OpCase {
  std::string name;
  std::vector<egoclust::Tensor<T>> inputs;
  std::function<egoclust::Tensor<T>()> loss;
};

// Each op is reduced to a scalar through a fixed random weighting so that no
// output coordinate is left out of the check.
template <typename T>
std::vector<OpCase<T>> op_cases(std::uint64_t seed = 17) {
  using namespace egoclust;
  std::mt19937_64 rng(seed);
  auto rnd = [&](Shape s, double lo = -1.0, double hi = 1.0) { return random_tensor<T>(std::move(s), rng, lo, hi); };

  std::vector<OpCase<T>> cases;
  auto add_case = [&](std::string name, std::vector<Tensor<T>> inputs, std::function<Tensor<T>()> body) {
    // Output shape fixed by one evaluation; weights drawn once.
    const auto probe = body();
    const auto w = random_tensor<T>(probe.shape(), rng, -1.0, 1.0, false);
    cases.push_back({std::move(name), std::move(inputs), [body, w] { return sum(mul(body(), w)); }});
  };

  {
    auto a = rnd({3, 4}), b = rnd({3, 4});
    add_case("add", {a, b}, [=] { return add(a, b); });
    add_case("sub", {a, b}, [=] { return sub(a, b); });
    add_case("mul", {a, b}, [=] { return mul(a, b); });
  }
  {
    auto a = rnd({3, 4});
    auto b = rnd({3, 4}, 0.5, 2.0);
    add_case("div", {a, b}, [=] { return div(a, b); });
    auto s = rnd({1}, 0.5, 2.0);
    add_case("div_scalar", {a, s}, [=] { return div(a, s); });
    add_case("mul_scalar", {a, s}, [=] { return mul(a, s); });
  }
  {
    auto a = rnd({2, 5});
    add_case("add_scalar", {a}, [=] { return add_scalar(a, T(0.7)); });
    add_case("scale", {a}, [=] { return scale(a, T(-1.3)); });
    add_case("neg", {a}, [=] { return neg(a); });
    add_case("exp", {a}, [=] { return exp(a); });
    add_case("square", {a}, [=] { return square(a); });
    add_case("gelu", {a}, [=] { return gelu(a); });
  }
  {
    auto p = rnd({2, 5}, 0.2, 2.0);
    add_case("log", {p}, [=] { return log(p); });
    add_case("sqrt", {p}, [=] { return sqrt(p); });
    // floor at 0.1 sits in the gap (-0.2, 0.2) of the inputs below, away from the kink
    std::vector<T> v{T(-0.9), T(-0.5), T(-0.3), T(0.3), T(0.6), T(0.95)};
    auto c = Tensor<T>::from_data({6}, v, true);
    add_case("clamp_min", {c}, [=] { return clamp_min(c, T(0.1)); });
  }
  {
    auto x = rnd({3, 4}), bias = rnd({4});
    add_case("add_bias", {x, bias}, [=] { return add_bias(x, bias); });
    auto w = rnd({4, 2});
    add_case("matmul", {x, w}, [=] { return matmul(x, w); });
    add_case("transpose", {x}, [=] { return transpose(x); });
    add_case("reshape", {x}, [=] { return reshape(x, {2, 6}); });
    add_case("slice", {x}, [=] { return slice(x, 1, 1, 2); });
    add_case("sum", {x}, [=] { return sum(x); });
    add_case("mean", {x}, [=] { return mean(x); });
    add_case("sum_axis0", {x}, [=] { return sum_axis(x, 0); });
    add_case("mean_axis1_keepdim", {x}, [=] { return mean_axis(x, 1, true); });
    add_case("softmax", {x}, [=] { return softmax(x, 1); });
    add_case("softmax_axis0", {x}, [=] { return softmax(x, 0); });
    auto gain = rnd({4}, 0.5, 1.5), beta = rnd({4});
    add_case("layernorm", {x, gain, beta}, [=] { return layernorm(x, gain, beta); });
    const std::vector<std::size_t> rows{2, 0};
    add_case("gather_rows", {x}, [=] { return gather_rows(x, std::span<const std::size_t>(rows)); });
    add_case("scatter_rows", {x}, [=] { return scatter_rows(x, std::span<const std::size_t>(std::vector<std::size_t>{4, 1, 2}), 5); });
    auto v = rnd({4});
    add_case("repeat_row", {v}, [=] { return repeat_row(v, 3); });
    const std::vector<int> labels{1, 3, 0};
    add_case("softmax_cross_entropy", {x}, [=] { return reshape(softmax_cross_entropy(x, std::span<const int>(labels)), {1}); });
  }
  {
    auto a = rnd({2, 3, 4}), b = rnd({2, 4, 2});
    add_case("bmm", {a, b}, [=] { return bmm(a, b); });
    add_case("permute", {a}, [=] { return permute(a, {2, 0, 1}); });
    add_case("sum_axis1_3d", {a}, [=] { return sum_axis(a, 1); });
    auto c = rnd({2, 3, 4});
    add_case("stack", {a, c}, [=] { return stack(std::vector<Tensor<T>>{a, c}); });
  }
  return cases;
}

// The whole joint loss of the tiny model on a fixed 2-image batch, checked
// against every parameter. Views and masks are drawn once so the loss is a
// deterministic function of the weights. Weights are redrawn at O(1) scale:
// at the 0.02 init the projected slabs have near-zero norm and the cosine is
// too sharply curved for any fixed difference step.
template <typename T>
OpCase<T> joint_loss_case(std::uint64_t seed = 23) {
  using namespace egoclust;
  const auto config = tiny_model();
  auto net = std::make_shared<CmNet<T>>(config, seed);
  std::mt19937_64 rng(seed);
  AugmentPolicy policy;
  policy.output_size = config.encoder.image_size;
  std::vector<ViewPair<T>> batch;
  for (int i = 0; i < 2; ++i) {
    const auto img = random_image(10, 12, rng);
    batch.push_back(make_view_pair<T>(img, policy, config.encoder, rng));
  }
  std::vector<Tensor<T>> params;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto& [name, t] : net->parameters().entries()) {
    params.push_back(t);
    for (auto& v : params.back().mutable_data()) v = static_cast<T>(u(rng));
  }
  return {"joint_loss", params, [net, batch] { return net->losses(batch, 0.8, 0.02, 0.5).joint; }};
}

}  // namespace testing
