#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "quantface/error.hpp"
#include "quantface/model.hpp"
#include "quantface/rng.hpp"

using namespace quantface;

namespace {

Tensor random_image(std::uint64_t seed, std::size_t size = 32) {
  Tensor t({3, size, size});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = 0.5 + 0.2 * rng.next_gaussian();
  }
  return t;
}

}  // namespace

TEST_CASE("noise schedule is linear, 1-indexed, range checked", "[model]") {
  const NoiseSchedule s = NoiseSchedule::linear(1000);
  REQUIRE(s.at(1) == Catch::Approx(0.99));
  REQUIRE(s.at(1000) == Catch::Approx(0.01));
  // Linear interpolation midpoint.
  REQUIRE(s.at(500) ==
          Catch::Approx(0.99 + (0.01 - 0.99) * (499.0 / 999.0)));
  REQUIRE_THROWS_AS(s.at(0), Error);
  REQUIRE_THROWS_AS(s.at(1001), Error);
}

TEST_CASE("one-step estimate inverts forward diffusion exactly", "[model]") {
  const NoiseSchedule s = NoiseSchedule::linear(1000);
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (std::size_t t : {1u, 250u, 500u, 750u, 1000u}) {
      const Tensor x0 = random_image(seed, 8);
      // Reproduce the exact noise stream the forward process draws.
      Tensor eps({3, 8, 8});
      SplitMix64 rng(seed + 1000);
      for (std::size_t i = 0; i < eps.size(); ++i) {
        eps[i] = rng.next_gaussian();
      }
      const Tensor x_t = forward_diffusion(x0, t, s, seed + 1000);
      const Tensor back = one_step_estimate(x_t, eps, t, s);
      REQUIRE(oracle::max_abs_diff(back, x0) < 1e-12);
    }
  }
}

TEST_CASE("layer registry lists all thirteen sites with exact counts",
          "[model]") {
  const ToyUNet model(7, 32);
  const auto reg = model.layer_registry();
  REQUIRE(reg.size() == 13);

  const std::vector<std::string> names = {
      "stem", "enc1", "down1", "enc2", "down2", "mid", "up1",
      "skip_a", "dec1", "up2", "skip_b", "dec2", "head"};
  // act_elements = C*H*W of the tensor entering each site's quantizer (the
  // conv input after any upsampling; the sum for skip-adds).
  const std::vector<std::size_t> elements = {
      3 * 32 * 32,   // stem in: 3x32x32
      8 * 32 * 32,   // enc1
      8 * 32 * 32,   // down1 input (stride-2 output is 16x16)
      16 * 16 * 16,  // enc2
      16 * 16 * 16,  // down2 input
      32 * 8 * 8,    // mid
      32 * 16 * 16,  // up1: conv input after x2 upsample
      16 * 16 * 16,  // skip_a sum
      16 * 16 * 16,  // dec1
      16 * 32 * 32,  // up2 after upsample
      8 * 32 * 32,   // skip_b sum
      8 * 32 * 32,   // dec2
      8 * 32 * 32,   // head
  };
  std::size_t conv_sites = 0, skip_sites = 0;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    REQUIRE(reg[i].handle == names[i]);
    REQUIRE(reg[i].act_elements == elements[i]);
    if (reg[i].kind == SiteKind::SkipAdd) {
      ++skip_sites;
      REQUIRE(reg[i].weight_shape.empty());
    } else {
      ++conv_sites;
      REQUIRE(reg[i].weight_shape.size() == 4);
    }
  }
  REQUIRE(conv_sites == 11);
  REQUIRE(skip_sites == 2);
}

TEST_CASE("fresh model forward is bitwise transparent", "[model]") {
  // With every quantizer off, the hook-laden forward must equal a plain
  // convolution chain exactly, not approximately.
  const ToyUNet model(3, 16);
  const Tensor x = random_image(4, 16);
  const Tensor via_sites = model.forward(x);
  const Tensor plain = model.forward_reference(x);
  REQUIRE(oracle::max_abs_diff(via_sites, plain) == 0.0);
}

TEST_CASE("weight init is seeded and seed-sensitive", "[model]") {
  const ToyUNet a(11, 16), b(11, 16), c(12, 16);
  const Tensor x = random_image(5, 16);
  REQUIRE(oracle::max_abs_diff(a.forward(x), b.forward(x)) == 0.0);
  REQUIRE(oracle::max_abs_diff(a.forward(x), c.forward(x)) > 0.0);
}

TEST_CASE("enabling activation quantization without calibration throws",
          "[model]") {
  ToyUNet model(13, 16);
  model.site(0).act_bits = 4;  // bits set but no params frozen
  const Tensor x = random_image(6, 16);
  REQUIRE_THROWS_AS(model.forward(x), Error);
  try {
    model.forward(x);
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::State);
  }
}

TEST_CASE("skip connections contribute to the output", "[model]") {
  // Structural guard: re-run with the encoder contribution zeroed out of
  // one skip site and require the output to move.
  ToyUNet model(17, 16);
  const Tensor x = random_image(7, 16);
  const Tensor y_ref = model.forward(x);

  ModelCache cache;
  model.forward(x, &cache);
  // enc1 feeds skip_b; killing enc1's weights changes the skip sum.
  for (std::size_t i = 0; i < model.site(1).layer.kernel_t.size(); ++i) {
    model.site(1).layer.kernel_t[i] = 0.0;
  }
  const Tensor y_cut = model.forward(x);
  REQUIRE(oracle::max_abs_diff(y_ref, y_cut) > 1e-6);
}

TEST_CASE("restore applies the one-step reconstruction at fixed t",
          "[model]") {
  const ToyUNet model(19, 16);
  const NoiseSchedule s = NoiseSchedule::linear(1000);
  const Tensor lq = random_image(8, 16);
  const Tensor img = restore(model, lq, s, 1000);
  REQUIRE(img.shape() == lq.shape());
  // Hand recomputation: (x_t - sqrt(1 - abar) * eps_hat) / sqrt(abar).
  const Tensor eps_hat = model.forward(lq);
  const double abar = s.at(1000);
  Tensor want(lq.shape());
  for (std::size_t i = 0; i < lq.size(); ++i) {
    want[i] = (lq[i] - std::sqrt(1.0 - abar) * eps_hat[i]) / std::sqrt(abar);
  }
  REQUIRE(oracle::max_abs_diff(img, want) < 1e-12);
}

TEST_CASE("model rejects invalid image sizes and inputs", "[model]") {
  REQUIRE_THROWS_AS(ToyUNet(1, 6), Error);    // below minimum
  REQUIRE_THROWS_AS(ToyUNet(1, 10), Error);   // not a multiple of 4
  const ToyUNet model(1, 16);
  REQUIRE_THROWS_AS(model.forward(Tensor({3, 8, 8})), Error);
  REQUIRE_THROWS_AS(model.forward(Tensor({1, 16, 16})), Error);
}
