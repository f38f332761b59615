#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "quantface/error.hpp"
#include "quantface/rng.hpp"
#include "quantface/tensor.hpp"

using namespace quantface;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  return t;
}

}  // namespace

TEST_CASE("matmul matches the triple-loop oracle", "[tensor]") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor a = random_tensor({7, 5}, seed);
    const Tensor b = random_tensor({5, 9}, seed + 100);
    const Tensor c = matmul(a, b);
    REQUIRE(c.dim(0) == 7);
    REQUIRE(c.dim(1) == 9);
    REQUIRE(oracle::max_abs_diff(c, oracle::matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions", "[tensor]") {
  const Tensor a({2, 3});
  const Tensor b({4, 2});
  REQUIRE_THROWS_AS(matmul(a, b), Error);
}

TEST_CASE("transpose is an involution and swaps entries", "[tensor]") {
  const Tensor a = random_tensor({4, 6}, 11);
  const Tensor t = transpose(a);
  REQUIRE(t.dim(0) == 6);
  REQUIRE(t.at(2, 3) == a.at(3, 2));
  REQUIRE(oracle::max_abs_diff(transpose(t), a) == 0.0);
}

TEST_CASE("conv2d equals the direct nested-loop convolution", "[tensor]") {
  SECTION("stride 1, pad 1") {
    const Tensor x = random_tensor({3, 6, 6}, 21);
    const Tensor k = random_tensor({4, 3, 3, 3}, 22);
    ConvSpec spec{3, 4, 3, 1, 1};
    REQUIRE(oracle::max_abs_diff(conv2d(x, k, spec),
                                 oracle::conv2d(x, k, 1, 1)) < 1e-12);
  }
  SECTION("stride 2 downsampling") {
    const Tensor x = random_tensor({2, 8, 8}, 23);
    const Tensor k = random_tensor({5, 2, 3, 3}, 24);
    ConvSpec spec{2, 5, 3, 2, 1};
    const Tensor got = conv2d(x, k, spec);
    REQUIRE(got.dim(1) == 4);
    REQUIRE(oracle::max_abs_diff(got, oracle::conv2d(x, k, 2, 1)) < 1e-12);
  }
}

TEST_CASE("im2col and col2im are adjoint", "[tensor]") {
  // <im2col(x), y> == <x, col2im(y)> for random y: the defining property of
  // the transpose operator, checked without reusing either implementation.
  const Tensor x = random_tensor({3, 5, 5}, 31);
  ConvSpec spec{3, 2, 3, 1, 1};
  const Tensor cols = im2col(x, spec);
  const Tensor y = random_tensor(cols.shape(), 32);
  double lhs = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * y[i];
  const Tensor back = col2im(y, spec, x.dim(1), x.dim(2));
  double rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("kernel matrix layout matches im2col column order", "[tensor]") {
  // conv2d is built from im2col @ kernel_to_matrix; equality with the naive
  // convolution (above) plus this roundtrip pins the layout.
  const Tensor k = random_tensor({4, 3, 3, 3}, 41);
  ConvSpec spec{3, 4, 3, 1, 1};
  const Tensor m = kernel_to_matrix(k, spec);
  REQUIRE(m.dim(0) == spec.patch_depth());
  REQUIRE(m.dim(1) == 4);
  REQUIRE(oracle::max_abs_diff(matrix_to_kernel(m, spec), k) == 0.0);
}

TEST_CASE("upsample_nearest duplicates pixels and has exact adjoint",
          "[tensor]") {
  const Tensor x = random_tensor({2, 3, 3}, 51);
  const Tensor up = upsample_nearest(x, 2);
  REQUIRE(up.dim(1) == 6);
  REQUIRE(up.at(1, 5, 4) == x.at(1, 2, 2));

  const Tensor g = random_tensor(up.shape(), 52);
  double lhs = 0.0;
  for (std::size_t i = 0; i < up.size(); ++i) lhs += up[i] * g[i];
  const Tensor back = upsample_nearest_backward(g, 2, 3, 3);
  double rhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * back[i];
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("avgpool2 averages 2x2 blocks and has exact adjoint", "[tensor]") {
  Tensor x({1, 2, 2});
  x[0] = 1.0; x[1] = 2.0; x[2] = 3.0; x[3] = 4.0;
  const Tensor p = avgpool2(x);
  REQUIRE(p.size() == 1);
  REQUIRE(p[0] == Catch::Approx(2.5));

  const Tensor big = random_tensor({3, 4, 4}, 61);
  const Tensor pooled = avgpool2(big);
  const Tensor g = random_tensor(pooled.shape(), 62);
  double lhs = 0.0;
  for (std::size_t i = 0; i < pooled.size(); ++i) lhs += pooled[i] * g[i];
  const Tensor back = avgpool2_backward(g);
  double rhs = 0.0;
  for (std::size_t i = 0; i < big.size(); ++i) rhs += big[i] * back[i];
  REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("elementwise arithmetic validates shapes", "[tensor]") {
  const Tensor a({2, 2});
  const Tensor b({4});
  REQUIRE_THROWS_AS(a + b, Error);
  REQUIRE_THROWS_AS(a - b, Error);
}
