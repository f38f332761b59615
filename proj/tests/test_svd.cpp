#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "quantface/error.hpp"
#include "quantface/rng.hpp"
#include "quantface/svd.hpp"

using namespace quantface;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Tensor t({r, c});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
  return t;
}

Tensor reconstruct(const SvdResult& s) {
  Tensor us = s.u;  // U * diag(sigma)
  for (std::size_t i = 0; i < us.dim(0); ++i) {
    for (std::size_t j = 0; j < us.dim(1); ++j) {
      us.at(i, j) *= s.sigma[j];
    }
  }
  return matmul(us, transpose(s.v));
}

double orthonormality_defect(const Tensor& q) {
  const Tensor g = oracle::matmul(transpose(q), q);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.dim(0); ++i) {
    for (std::size_t j = 0; j < g.dim(1); ++j) {
      worst = std::max(worst, std::fabs(g.at(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("thin SVD reconstructs the input with orthonormal factors",
          "[svd]") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const std::size_t r = 5 + seed % 4, c = 3 + seed % 5;
    const Tensor w = random_matrix(r, c, seed);
    const SvdResult s = thin_svd(w);
    REQUIRE(oracle::rel_frobenius_diff(reconstruct(s), w) < 1e-10);
    REQUIRE(orthonormality_defect(s.u) < 1e-10);
    REQUIRE(orthonormality_defect(s.v) < 1e-10);
    for (std::size_t i = 0; i + 1 < s.sigma.size(); ++i) {
      REQUIRE(s.sigma[i] >= s.sigma[i + 1]);  // descending
      REQUIRE(s.sigma[i + 1] >= 0.0);
    }
  }
}

TEST_CASE("singular values preserve the Frobenius norm", "[svd]") {
  const Tensor w = random_matrix(12, 7, 99);
  const SvdResult s = thin_svd(w);
  double sumsq = 0.0;
  for (double sv : s.sigma) sumsq += sv * sv;
  REQUIRE(sumsq == Catch::Approx(frobenius_norm_sq(w)).epsilon(1e-10));
}

TEST_CASE("SVD of a known diagonal matrix", "[svd]") {
  Tensor w({3, 3});
  w.at(0, 0) = 3.0;
  w.at(1, 1) = -5.0;  // sign goes into the factors, sigma stays positive
  w.at(2, 2) = 1.0;
  const SvdResult s = thin_svd(w);
  REQUIRE(s.sigma[0] == Catch::Approx(5.0).margin(1e-10));
  REQUIRE(s.sigma[1] == Catch::Approx(3.0).margin(1e-10));
  REQUIRE(s.sigma[2] == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("rank-deficient matrices get exact zero tail", "[svd]") {
  // Outer product => rank 1.
  const Tensor a = random_matrix(6, 1, 3);
  const Tensor b = random_matrix(1, 4, 4);
  const Tensor w = matmul(a, b);
  const SvdResult s = thin_svd(w);
  REQUIRE(s.sigma[0] > 0.0);
  for (std::size_t i = 1; i < s.sigma.size(); ++i) {
    REQUIRE(s.sigma[i] < 1e-10 * s.sigma[0]);
  }
  REQUIRE(oracle::rel_frobenius_diff(reconstruct(s), w) < 1e-10);
  REQUIRE(orthonormality_defect(s.u) < 1e-10);
}

TEST_CASE("wide matrices are handled via the transpose path", "[svd]") {
  const Tensor w = random_matrix(4, 9, 17);
  const SvdResult s = thin_svd(w);
  REQUIRE(s.u.dim(0) == 4);
  REQUIRE(s.v.dim(0) == 9);
  REQUIRE(s.sigma.size() == 4);
  REQUIRE(oracle::rel_frobenius_diff(reconstruct(s), w) < 1e-10);
}

TEST_CASE("truncated factors multiply to the best rank-r approximation",
          "[svd]") {
  const Tensor w = random_matrix(8, 6, 23);
  const SvdResult s = thin_svd(w);
  const std::size_t r = 3;
  const auto [l1, l2] = truncated_factors(s, r);
  REQUIRE(l1.dim(0) == 8);
  REQUIRE(l1.dim(1) == r);
  REQUIRE(l2.dim(0) == r);
  REQUIRE(l2.dim(1) == 6);
  // Residual energy equals the tail singular values (Eckart-Young).
  const double residual = frobenius_norm_sq(w - matmul(l1, l2));
  double tail = 0.0;
  for (std::size_t i = r; i < s.sigma.size(); ++i) {
    tail += s.sigma[i] * s.sigma[i];
  }
  REQUIRE(residual == Catch::Approx(tail).margin(1e-9));
}

TEST_CASE("SVD rejects non-finite inputs", "[svd]") {
  Tensor w({2, 2});
  w[0] = std::nan("");
  REQUIRE_THROWS_AS(thin_svd(w), Error);
}
