#include "egoclust/contrastive.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace egoclust;

namespace {

std::vector<Tensor<double>> grids(std::size_t n, std::mt19937_64& rng) {
  std::vector<Tensor<double>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(testing::random_tensor<double>({3, 4, 2}, rng, -1.0, 1.0, false));
  return out;
}

}  // namespace

TEST_CASE("similarity matrix matches the slab-wise cosine loop") {
  std::mt19937_64 rng(1);
  const auto a = grids(3, rng), b = grids(4, rng);
  const auto s = similarity_matrix(a, b);
  REQUIRE(s.shape() == Shape{3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(s.at({i, j}) - testing::sim_oracle(a[i], b[j])) <= 1e-12);
  CHECK(similarity(a[0], a[0]).item() == doctest::Approx(1.0).epsilon(1e-12));

  const auto zero = Tensor<double>::zeros({3, 4, 2});
  CHECK(similarity(zero, a[0]).item() == 0.0);
  CHECK(similarity(zero, zero).item() == 0.0);
}

TEST_CASE("contrastive loss matches brute force") {
  std::mt19937_64 rng(2);
  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    CAPTURE(n);
    const auto z1 = grids(n, rng), z2 = grids(n, rng);
    CHECK(std::abs(contrastive_loss(z1, z2, 0.5).item() - testing::contrastive_oracle(z1, z2, 0.5)) <= 1e-6);
  }
}

TEST_CASE("contrastive loss special cases") {
  std::mt19937_64 rng(3);
  const auto one1 = grids(1, rng), one2 = grids(1, rng);
  CHECK(std::abs(contrastive_loss(one1, one2, 0.5).item()) <= 1e-12);

  const auto same = Tensor<double>::full({2, 2}, 0.3);
  CHECK(contrastive_loss_from_similarities(same, same, 0.5).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  // Large similarities stay finite thanks to the per-anchor shift.
  const auto big = Tensor<double>::from_data({2, 2}, {1.0, -1.0, -1.0, 1.0});
  CHECK(std::isfinite(contrastive_loss_from_similarities(big, big, 1e-3).item()));
  CHECK_THROWS(contrastive_loss_from_similarities(big, Tensor<double>::zeros({2, 3}), 0.5));
}

TEST_CASE("projection head fills masked grid cells") {
  ParameterStore<double> store;
  std::mt19937_64 rng(4);
  const auto cfg = testing::tiny_model();
  const Encoder<double> enc(cfg.encoder, store, rng);
  const ProjectionHead<double> head(cfg.encoder, cfg.proj_channels, store, rng);
  const auto tokens = patchify<double>(testing::random_image(8, 8, rng), 4);
  const auto mask = MaskSpec::from_masked(4, {1, 2});
  const auto z = head.project(enc.encode(apply_mask(tokens, mask), mask), enc.pos_embed());
  REQUIRE(z.shape() == Shape{cfg.proj_channels, 2, 2});
  // Masked cells (grid (row 0, col 1) and (row 1, col 0)) are not zero.
  double masked_energy = 0.0;
  for (std::size_t c = 0; c < cfg.proj_channels; ++c) masked_energy += std::abs(z.at({c, 1, 0})) + std::abs(z.at({c, 0, 1}));
  CHECK(masked_energy > 0.0);
}
