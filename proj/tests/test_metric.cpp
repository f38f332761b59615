#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "quantface/error.hpp"
#include "quantface/metric.hpp"
#include "quantface/rng.hpp"

using namespace quantface;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  return t;
}

}  // namespace

TEST_CASE("mse equals the hand sum", "[metric]") {
  const Tensor a = random_tensor({3, 4, 4}, 1);
  const Tensor b = random_tensor({3, 4, 4}, 2);
  double want = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    want += (a[i] - b[i]) * (a[i] - b[i]);
  }
  want /= static_cast<double>(a.size());
  REQUIRE(mse(a, b) == Catch::Approx(want).epsilon(1e-12));
  REQUIRE(mse(a, a) == 0.0);
  REQUIRE_THROWS_AS(mse(a, random_tensor({3, 2, 2}, 3)), Error);
}

TEST_CASE("downsampled mse pools 2x2 before comparing", "[metric]") {
  const Tensor a = random_tensor({2, 4, 4}, 4);
  const Tensor b = random_tensor({2, 4, 4}, 5);
  // Oracle: average each 2x2 block by hand, then plain MSE.
  Tensor pa({2, 2, 2}), pb({2, 2, 2});
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        pa.at(c, i, j) = 0.25 * (a.at(c, 2 * i, 2 * j) +
                                 a.at(c, 2 * i, 2 * j + 1) +
                                 a.at(c, 2 * i + 1, 2 * j) +
                                 a.at(c, 2 * i + 1, 2 * j + 1));
        pb.at(c, i, j) = 0.25 * (b.at(c, 2 * i, 2 * j) +
                                 b.at(c, 2 * i, 2 * j + 1) +
                                 b.at(c, 2 * i + 1, 2 * j) +
                                 b.at(c, 2 * i + 1, 2 * j + 1));
      }
    }
  }
  double want = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    want += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  }
  want /= static_cast<double>(pa.size());
  REQUIRE(downsampled_mse(a, b) == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("metric names parse and print consistently", "[metric]") {
  REQUIRE(parse_metric("mse") == MetricKind::Mse);
  REQUIRE(parse_metric("downsampled-mse") == MetricKind::DownsampledMse);
  REQUIRE(metric_name(MetricKind::Mse) == "mse");
  REQUIRE(metric_name(MetricKind::DownsampledMse) == "downsampled-mse");
  REQUIRE_THROWS_AS(parse_metric("ssim"), Error);
  try {
    parse_metric("ssim");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Config);
  }

  const Tensor a = random_tensor({2, 4, 4}, 6);
  const Tensor b = random_tensor({2, 4, 4}, 7);
  REQUIRE(eval_metric(MetricKind::Mse, a, b) == mse(a, b));
  REQUIRE(eval_metric(MetricKind::DownsampledMse, a, b) ==
          downsampled_mse(a, b));
}
