#include "egoclust/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace egoclust;

namespace {

// Reference AdamW for one scalar, written from the textbook update.
struct ScalarAdamW {
  double w, m = 0.0, v = 0.0;
  int t = 0;
  void step(double g, double lr, double wd, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w = w - lr * wd * w - lr * mh / (std::sqrt(vh) + eps);
  }
};

// Gradient of sum(c * w) is c.
void set_grad(Tensor<double>& w, const std::vector<double>& c) {
  w.zero_grad();
  backward(sum(mul(w, Tensor<double>::from_data(w.shape(), c))));
}

std::vector<Image> tiny_images(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::random_image(8, 8, rng));
  return out;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 2;
  c.epochs = 2;
  c.seed = 5;
  c.patience = 0;
  return c;
}

}  // namespace

TEST_CASE("joint loss weighting") {
  CHECK(testing::within_ulps(joint_loss(1.0, 10.0, 0.8, 0.02), 0.84, 4));
  CHECK(joint_loss(2.0, 7.0, 1.0, 0.02) == 2.0);
  CHECK(joint_loss(2.0, 7.0, 0.0, 0.5) == 3.5);
  const auto t = joint_loss(Tensor<double>::scalar(1.0), Tensor<double>::scalar(10.0), 0.8, 0.02);
  CHECK(t.item() == joint_loss(1.0, 10.0, 0.8, 0.02));
}

TEST_CASE("step decay schedule") {
  const TrainConfig c;
  CHECK(lr_at(0, c) == 5e-5);
  CHECK(lr_at(14, c) == 5e-5);
  CHECK(testing::within_ulps(lr_at(15, c), 4e-5, 4));
  CHECK(testing::within_ulps(lr_at(29, c), 4e-5, 4));
  CHECK(testing::within_ulps(lr_at(30, c), 3.2e-5, 4));
  CHECK(testing::within_ulps(lr_at(150, c), 5e-5 * std::pow(0.8, 10), 4));
}

TEST_CASE("AdamW matches the scalar reference") {
  TrainConfig cfg;
  cfg.weight_decay = 0.05;
  auto w = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5}, true);
  std::vector<Tensor<double>> params{w};
  OptimizerState<double> state;
  std::vector<ScalarAdamW> ref{{1.0}, {-2.0}, {0.5}};
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int step = 0; step < 25; ++step) {
    const std::vector<double> g{u(rng), u(rng), u(rng)};
    set_grad(w, g);
    const double lr = 0.01 * (1 + step % 3);
    adamw_step(params, state, lr, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
      ref[i].step(g[i], lr, 0.05);
      CHECK(w.to_vector()[i] == doctest::Approx(ref[i].w).epsilon(1e-12));
    }
  }
  // First step by hand: w (1 - lr wd) - lr g / (|g| + eps).
  auto x = Tensor<double>::from_data({1}, {1.0}, true);
  std::vector<Tensor<double>> xs{x};
  OptimizerState<double> fresh;
  set_grad(x, {2.0});
  adamw_step(xs, fresh, 0.1, cfg);
  CHECK(x.item() == doctest::Approx(1.0 * (1 - 0.1 * 0.05) - 0.1 * 2.0 / (2.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("AdamW skips parameters without gradients and minimizes a quadratic") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  auto a = Tensor<double>::from_data({1}, {-4.0}, true);
  auto idle = Tensor<double>::from_data({1}, {7.0}, true);
  std::vector<Tensor<double>> params{a, idle};
  OptimizerState<double> state;
  for (int i = 0; i < 3000; ++i) {
    a.zero_grad();
    backward(sum(square(add_scalar(a, -3.0))));
    adamw_step(params, state, 0.01, cfg);
  }
  CHECK(a.item() == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(idle.item() == 7.0);
}

TEST_CASE("convergence monitor") {
  ConvergenceMonitor m(3, 0.005);
  CHECK_FALSE(m.update(1.0));
  CHECK_FALSE(m.update(0.99));    // 1% improvement resets
  CHECK_FALSE(m.update(0.989));   // 0.1%
  CHECK_FALSE(m.update(0.9885));
  CHECK(m.update(0.99));          // third stalled epoch
  ConvergenceMonitor off(0, 0.005);
  for (int i = 0; i < 50; ++i) CHECK_FALSE(off.update(1.0));
}

TEST_CASE("loss records round-trip with absent branches as null") {
  LossRecord r{3, 1, std::nullopt, 2.5, 0.05, 4e-5};
  const auto line = r.to_json();
  CHECK(line.find("\"l_mae\":null") != std::string::npos);
  CHECK(LossRecord::from_json(line) == r);
}

TEST_CASE("training is bit-reproducible and logs every batch") {
  const auto images = tiny_images(5, 2);
  const auto cfg = tiny_train();
  const auto policy = AugmentPolicy::crop_and_flip(8);
  CmNet<double> a(testing::tiny_model(), 3), b(testing::tiny_model(), 3);
  std::ostringstream log_a, log_b;
  TrainOutputs out_a, out_b;
  out_a.loss_log = &log_a;
  out_b.loss_log = &log_b;
  const auto ra = train(images, a, cfg, policy, out_a);
  const auto rb = train(images, b, cfg, policy, out_b);
  CHECK(ra.log.size() == 6);  // 3 batches x 2 epochs, last batch short
  CHECK(ra.epochs_run == 2);
  CHECK(log_a.str() == log_b.str());
  CHECK(ra.epoch_means == rb.epoch_means);
  for (std::size_t i = 0; i < a.parameters().entries().size(); ++i)
    CHECK(a.parameters().entries()[i].second.to_vector() == b.parameters().entries()[i].second.to_vector());

  std::istringstream lines(log_a.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) CHECK(LossRecord::from_json(line) == ra.log[n++]);
  CHECK(n == 6);
}

TEST_CASE("training reduces the loss and checkpoints reload exactly") {
  testing::TempDir dir("train");
  const auto images = tiny_images(4, 3);
  auto cfg = tiny_train();
  cfg.epochs = 30;
  cfg.base_lr = 3e-3;
  cfg.checkpoint_every = 10;
  CmNet<double> net(testing::tiny_model(), 1);
  TrainOutputs out;
  out.run_dir = dir.path();
  const auto r = train(images, net, cfg, AugmentPolicy::deterministic(8), out);
  CHECK(r.epoch_means.back() < r.epoch_means.front());
  CHECK(std::filesystem::exists(dir / "checkpoint-epoch10.egoc"));
  CHECK(std::filesystem::exists(dir / "checkpoint.egoc"));
  const auto back = CmNet<double>::load(dir / "checkpoint.egoc");
  for (std::size_t i = 0; i < net.parameters().entries().size(); ++i)
    CHECK(net.parameters().entries()[i].second.to_vector() == back.parameters().entries()[i].second.to_vector());
}

TEST_CASE("training rejects bad input") {
  CmNet<double> net(testing::tiny_model(), 1);
  CHECK_THROWS(train({}, net, tiny_train(), AugmentPolicy::deterministic(8)));
  CHECK_THROWS(train(tiny_images(2, 1), net, tiny_train(), AugmentPolicy::deterministic(16)));
  auto bad = tiny_train();
  bad.alpha = 1.5;
  CHECK_THROWS(bad.validate());
  auto diverge = tiny_train();
  diverge.base_lr = std::numeric_limits<double>::infinity();
  diverge.epochs = 3;
  CHECK_THROWS_AS(train(tiny_images(2, 1), net, diverge, AugmentPolicy::deterministic(8)), NumericError);
}
