#include "egoclust/evaluation.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>

using namespace egoclust;

namespace {

// K Gaussian blobs in `dim` dimensions, balanced labels.
FeatureSet blobs(std::size_t per_class, int k, std::size_t dim, double spread, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> centers(k, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = 3.0 * g(rng);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (std::size_t i = 0; i < per_class; ++i)
    for (int c = 0; c < k; ++c) {
      std::vector<double> r(dim);
      for (std::size_t d = 0; d < dim; ++d) r[d] = centers[c][d] + spread * g(rng);
      rows.push_back(r);
      labels.push_back(c);
    }
  return FeatureSet::from_rows(rows, labels);
}

}  // namespace

TEST_CASE("clustering metrics agree with independent formulas on random partitions") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + trial % 40;
    const auto p = testing::random_partition(n, 1 + trial % 6, rng);
    const auto t = testing::random_partition(n, 1 + (trial / 6) % 5, rng);
    const auto m = cluster_metrics(p, t);
    CAPTURE(trial);
    CHECK(std::abs(m.ari - testing::ari_pairs(p, t)) <= 1e-9);
    CHECK(std::abs(m.nmi - testing::nmi_direct(p, t)) <= 1e-9);
    CHECK(std::abs(m.purity - testing::purity_direct(p, t)) <= 1e-9);
  }
}

TEST_CASE("clustering metrics ignore label names") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = testing::random_partition(30, 4, rng), t = testing::random_partition(30, 3, rng);
    std::vector<int> perm{7, -2, 40, 3};
    auto renamed = p;
    for (auto& v : renamed) v = perm[static_cast<std::size_t>(v)];
    const auto a = cluster_metrics(p, t), b = cluster_metrics(renamed, t);
    CHECK(a.ari == doctest::Approx(b.ari).epsilon(1e-12));
    CHECK(a.nmi == doctest::Approx(b.nmi).epsilon(1e-12));
    CHECK(a.purity == b.purity);
  }
  const std::vector<int> x{0, 0, 1, 1, 2};
  const auto same = cluster_metrics(x, x);
  CHECK(same.ari == doctest::Approx(1.0));
  CHECK(same.nmi == doctest::Approx(1.0));
  CHECK(same.purity == 1.0);
  CHECK_THROWS(cluster_metrics(std::vector<int>{0, 1}, std::vector<int>{0}));
  CHECK_THROWS(cluster_metrics(std::vector<int>{}, std::vector<int>{}));
}

TEST_CASE("probe separates one-hot features perfectly") {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> r(4, 0.0);
    r[static_cast<std::size_t>(i % 4)] = 1.0;
    rows.push_back(r);
    labels.push_back(i % 4);
  }
  const auto fs = FeatureSet::from_rows(rows, labels);
  ProbeConfig cfg;
  cfg.lr = 0.05;
  const auto r = linear_probe(fs, fs, cfg);
  CHECK(r.top1 == 1.0);
  CHECK(r.classes == std::vector<int>{0, 1, 2, 3});
  for (double a : r.per_class) CHECK(a == 1.0);
  CHECK(r.confusion[2][2] == 10);
}

TEST_CASE("probe on shuffled labels stays at chance") {
  // Structureless features make test predictions independent draws, so the
  // binomial sigma applies.
  const int k = 5;
  const std::size_t n_test = 200;
  std::vector<double> acc;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(100 + seed);
    auto train = blobs(40, k, 8, 0.0, rng);
    auto test = blobs(n_test / k, k, 8, 0.0, rng);
    std::normal_distribution<double> g(0.0, 1.0);
    for (auto& v : train.values) v = g(rng);
    for (auto& v : test.values) v = g(rng);
    std::shuffle(train.labels->begin(), train.labels->end(), rng);
    ProbeConfig cfg;
    cfg.seed = seed;
    acc.push_back(linear_probe(train, test, cfg).top1);
  }
  const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / 5.0;
  const double chance = 1.0 / k;
  const double sigma = std::sqrt(chance * (1 - chance) / (5.0 * n_test));
  CHECK(std::abs(mean - chance) <= 3.0 * sigma);
}

TEST_CASE("probe is deterministic and rejects degenerate input") {
  std::mt19937_64 rng(3);
  const auto data = blobs(10, 3, 4, 0.3, rng);
  ProbeConfig fast;
  fast.lr = 0.05;
  const auto a = linear_probe(data, data, fast), b = linear_probe(data, data, fast);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.top1 > 0.9);

  auto one_class = data;
  std::fill(one_class.labels->begin(), one_class.labels->end(), 1);
  CHECK_THROWS(linear_probe(one_class, data));
  auto unlabeled = data;
  unlabeled.labels.reset();
  CHECK_THROWS(linear_probe(unlabeled, data));

  // A test class never seen in training gets its own row, all misses.
  auto extra = data;
  (*extra.labels)[0] = 9;
  const auto r = linear_probe(data, extra);
  CHECK(r.classes.back() == 9);
  CHECK(r.per_class.back() == 0.0);
}

TEST_CASE("PCA recovers a known principal axis") {
  std::vector<std::vector<double>> rows;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double s = 5.0 * g(rng), n = 0.1 * g(rng);
    rows.push_back({1.0 - 0.6 * s + 0.8 * n, 2.0 - 0.8 * s - 0.6 * n, 3.0});
  }
  const auto fs = FeatureSet::from_rows(rows);
  const auto p = pca_project(fs, 2);
  // Largest entry positive: (-0.6, -0.8) flips to (0.6, 0.8).
  CHECK(p.components[0] == doctest::Approx(0.6).epsilon(1e-2));
  CHECK(p.components[1] == doctest::Approx(0.8).epsilon(1e-2));
  CHECK(std::abs(p.components[2]) < 1e-9);
  CHECK(p.eigenvalues[0] > 100 * p.eigenvalues[1]);
  CHECK(std::abs(p.eigenvalues[2]) < 1e-9);
}

TEST_CASE("PCA identities on random data") {
  std::mt19937_64 rng(5);
  std::vector<std::vector<double>> rows;
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 50; ++i) rows.push_back({g(rng), 2 * g(rng), 0.5 * g(rng) + g(rng), g(rng)});
  const auto fs = FeatureSet::from_rows(rows);
  const auto p = pca_project(fs, 3);
  const std::size_t d = 4, n = 50;

  double trace = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += std::pow(rows[i][j] - p.mean[j], 2) / n;
    trace += var;
  }
  CHECK(std::accumulate(p.eigenvalues.begin(), p.eigenvalues.end(), 0.0) == doctest::Approx(trace).epsilon(1e-10));
  CHECK(std::is_sorted(p.eigenvalues.rbegin(), p.eigenvalues.rend()));

  for (std::size_t a = 0; a < 3; ++a) {
    double big = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      if (std::abs(p.components[a * d + j]) > std::abs(big)) big = p.components[a * d + j];
    CHECK(big > 0.0);
    for (std::size_t b = 0; b < 3; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += p.components[a * d + j] * p.components[b * d + j];
      CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-10));
    }
    // The variance of each projected coordinate is its eigenvalue.
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += p.coordinates[i * 3 + a] * p.coordinates[i * 3 + a] / n;
    CHECK(var == doctest::Approx(p.eigenvalues[a]).epsilon(1e-9));
  }
  CHECK_THROWS(pca_project(fs, 5));
}

TEST_CASE("feature extraction matches per-frame pooling and is thread-count independent") {
  ParameterStore<float> store;
  std::mt19937_64 rng(6);
  const Encoder<float> enc(testing::tiny_model().encoder, store, rng);
  ImageSequence seq;
  for (int i = 0; i < 7; ++i) seq.frames.push_back({testing::random_image(8, 8, rng), 10 + i, std::nullopt, ""});
  const auto one = extract_features(seq, enc, 1);
  const auto three = extract_features(seq, enc, 3);
  CHECK(one.values == three.values);
  CHECK(one.frame_index.front() == 10);
  CHECK(one.dim == 8);
  const auto pooled = enc.pooled(seq.frames[4].image);
  for (std::size_t k = 0; k < 8; ++k) CHECK(one.row(4)[k] == static_cast<double>(pooled[k]));
}

TEST_CASE("thread count comes from the environment") {
  ::setenv("EGOCLUST_THREADS", "3", 1);
  CHECK(worker_threads() == 3);
  ::setenv("EGOCLUST_THREADS", "zero", 1);
  CHECK_THROWS(worker_threads());
  ::unsetenv("EGOCLUST_THREADS");
  CHECK(worker_threads() >= 1);
}

TEST_CASE("feature and projection files") {
  testing::TempDir dir("eval");
  const auto fs = FeatureSet::from_rows({{0.1, -2.5}, {1e-17, 3.0}, {4.0, 5.0}});
  write_features_csv(fs, dir / "f.csv");
  const auto back = read_features_csv(dir / "f.csv");
  CHECK(back.values == fs.values);
  CHECK(back.frame_index == fs.frame_index);
  CHECK(testing::slurp(dir / "f.csv").rfind("frame_index,f0,f1\n", 0) == 0);

  const auto p = pca_project(fs, 2);
  write_projection_csv(fs, p, std::vector<int>{0, 0, 1}, dir / "p.csv");
  CHECK(testing::slurp(dir / "p.csv").rfind("frame_index,x,y,event_id\n", 0) == 0);

  write_metrics_json(dir / "m.json", std::nullopt, 0.5);
  const auto text = testing::slurp(dir / "m.json");
  CHECK(text.find("\"ari\": null") != std::string::npos);
  CHECK(text.find("0.5") != std::string::npos);
}
