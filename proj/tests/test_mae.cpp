#include "egoclust/mae.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <doctest.h>

using namespace egoclust;

TEST_CASE("mae loss matches a double-loop MSE") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = testing::random_tensor<double>({16, 12}, rng, 0.0, 1.0, false);
    const auto mask = sample_mask(16, 0.75, rng);
    const auto recon = testing::random_tensor<double>({mask.masked.size(), 12}, rng);
    CHECK(std::abs(mae_loss(recon, tokens, mask).item() - testing::mse_oracle(recon, tokens, mask)) <= 1e-6);
  }
}

TEST_CASE("masked targets equal the original minus the masked input on masked rows") {
  std::mt19937_64 rng(2);
  const auto tokens = testing::random_tensor<double>({8, 5}, rng, 0.0, 1.0, false);
  const auto mask = MaskSpec::from_masked(8, {1, 4, 6});
  const auto targets = masked_targets(tokens, mask);
  const auto masked_input = apply_mask(tokens, mask);
  REQUIRE(targets.shape() == Shape{3, 5});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c)
      CHECK(targets.at({r, c}) == tokens.at({mask.masked[r], c}) - masked_input.at({mask.masked[r], c}));
  CHECK(mae_loss(targets, tokens, mask).item() == 0.0);
}

TEST_CASE("decoder emits one patch per masked token") {
  ParameterStore<double> store;
  std::mt19937_64 rng(3);
  const auto cfg = testing::tiny_model();
  const Encoder<double> enc(cfg.encoder, store, rng);
  const MaeDecoder<double> dec(cfg.encoder, cfg.decoder, store, rng);
  const auto tokens = patchify<double>(testing::random_image(8, 8, rng), 4);
  const auto mask = MaskSpec::from_masked(4, {0, 2, 3});
  const auto recon = dec.decode(enc.encode(apply_mask(tokens, mask), mask));
  CHECK(recon.shape() == Shape{3, 48});
  CHECK_THROWS(mae_loss(recon, tokens, MaskSpec::from_masked(4, {1})));
}
