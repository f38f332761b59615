#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "quantface/alloc.hpp"
#include "quantface/rng.hpp"

using namespace quantface;

namespace {

// Seeded instance with integer losses (FP sums are exact) and strictly
// decreasing rows, so objectives can be compared for exact equality.
AllocProblem random_instance(std::uint64_t seed, std::size_t n,
                             double budget_bits) {
  SplitMix64 rng(seed);
  AllocProblem p;
  p.candidate_bits = {3, 4, 5, 6};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t elems = 32 * (1 + rng.next() % 16);
    p.elements.push_back(elems);
    total += static_cast<double>(elems);
    double loss = 512.0 + static_cast<double>(rng.next() % 8192);
    std::vector<double> row;
    for (std::size_t j = 0; j < p.candidate_bits.size(); ++j) {
      row.push_back(loss);
      loss = std::floor(loss / 2.0);
    }
    p.loss.push_back(row);
  }
  p.budget = budget_bits * total;
  return p;
}

}  // namespace

TEST_CASE("DP allocation equals brute force on seeded instances", "[alloc]") {
  std::size_t solved = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    // Sweep budgets from tight (3.0 avg) to slack (6.0 avg).
    const double avg = 3.0 + 0.075 * static_cast<double>(seed);
    const AllocProblem p = random_instance(seed, 7, avg);
    const AllocSolution dp = solve_allocation(p);
    const AllocSolution bf = brute_force_allocation(p);
    REQUIRE(dp.objective == bf.objective);  // exact: integer-valued losses
    REQUIRE(dp.bits == bf.bits);            // shared tie-break rule
    REQUIRE(dp.total_cost <= p.budget);
    ++solved;
  }
  REQUIRE(solved == 40);
}

TEST_CASE("slack budgets saturate at the largest candidate", "[alloc]") {
  const AllocProblem p = random_instance(5, 6, 6.0);
  const AllocSolution s = solve_allocation(p);
  for (int b : s.bits) REQUIRE(b == 6);
}

TEST_CASE("tight budgets pin the smallest candidate", "[alloc]") {
  const AllocProblem p = random_instance(6, 6, 3.0);
  const AllocSolution s = solve_allocation(p);
  for (int b : s.bits) REQUIRE(b == 3);
  REQUIRE(average_bits(s, p) == Catch::Approx(3.0));
}

TEST_CASE("infeasible budgets raise Infeasible naming the minimum cost",
          "[alloc]") {
  AllocProblem p = random_instance(7, 5, 3.0);
  p.budget = 2.9 * 160.0;  // below even all-3-bit for these elements? ensure:
  // set the budget strictly below the minimal achievable cost
  double min_cost = 0.0;
  for (std::size_t e : p.elements) min_cost += 3.0 * static_cast<double>(e);
  p.budget = min_cost - 1.0;
  try {
    solve_allocation(p);
    FAIL("expected Infeasible");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::Infeasible);
    const std::string msg = e.what();
    REQUIRE(msg.find(std::to_string(static_cast<long long>(min_cost))) !=
            std::string::npos);
  }
}

TEST_CASE("ties prefer the higher bit width", "[alloc]") {
  // Two layers, equal losses everywhere: any assignment under budget has
  // objective 0 + 0; the solver must pick the most generous feasible bits.
  AllocProblem p;
  p.candidate_bits = {3, 4};
  p.elements = {10, 10};
  p.loss = {{5.0, 5.0}, {5.0, 5.0}};
  p.budget = 70.0;  // allows exactly one layer at 4 bits
  const AllocSolution dp = solve_allocation(p);
  const AllocSolution bf = brute_force_allocation(p);
  REQUIRE(dp.bits == bf.bits);
  REQUIRE(dp.bits == std::vector<int>{4, 3});  // first layer upgraded first
}

TEST_CASE("monotonicity clamping repairs decreasing rows", "[alloc]") {
  AllocProblem p;
  p.candidate_bits = {3, 4, 5};
  p.elements = {8, 8};
  p.loss = {{10.0, 12.0, 4.0},   // 4-bit entry breaks monotonicity
            {9.0, 6.0, 6.0}};    // already nonincreasing
  const auto clamped = clamp_loss_monotonicity(p);
  REQUIRE(clamped.size() == 1);
  REQUIRE(clamped[0].first == 0);
  REQUIRE(clamped[0].second == 1);
  REQUIRE(p.loss[0][1] == 10.0);  // clamped down to the previous entry
  REQUIRE(p.loss[1] == std::vector<double>{9.0, 6.0, 6.0});
}

TEST_CASE("malformed problems are rejected", "[alloc]") {
  AllocProblem p;
  p.candidate_bits = {4, 3};  // not ascending
  p.elements = {8};
  p.loss = {{1.0, 1.0}};
  p.budget = 100.0;
  REQUIRE_THROWS_AS(solve_allocation(p), Error);

  AllocProblem big = random_instance(8, 13, 4.0);
  REQUIRE_THROWS_AS(brute_force_allocation(big), Error);  // N > 12
}

TEST_CASE("assign_weights escalates until the delta fits", "[alloc]") {
  // Synthetic deltas: layer i needs exactly bits >= 2 + i to fit.
  const double eps = 1.0;
  std::size_t evals = 0;
  const PerceptualWeights pw = assign_weights(
      4, eps, 8, [&](std::size_t i, int bits) {
        ++evals;
        return bits >= static_cast<int>(2 + i) ? 0.5 : 10.0;
      });
  REQUIRE(pw.bits == std::vector<int>{2, 3, 4, 5});
  REQUIRE(pw.w[0] == 3.0);     // 2^2 - 1
  REQUIRE(pw.w[3] == 31.0);    // 2^5 - 1
  REQUIRE(pw.evaluations == evals);
  REQUIRE(evals <= (8 - 1) * 4);
}

TEST_CASE("layers that never fit get b_max", "[alloc]") {
  const PerceptualWeights pw = assign_weights(
      2, 1e-9, 8, [](std::size_t, int) { return 1.0; });
  REQUIRE(pw.bits == std::vector<int>{8, 8});
  REQUIRE(pw.w[0] == 255.0);
  REQUIRE(pw.evaluations == 14);  // (b_max - 1) * N exactly
}

TEST_CASE("layer_loss matches a from-scratch computation", "[alloc]") {
  SplitMix64 rng(21);
  Tensor x({12, 6}), w({6, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.next_gaussian();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.next_gaussian();
  const auto wq = calibrate_per_output_channel(w, 4);
  const QuantParams xq = calibrate_minmax(x, 4, false);
  const double w_i = 7.0;

  const double got = layer_loss(w_i, w, x, wq, xq);

  // Oracle: quantize scalar-by-scalar with the independent reference
  // quantizer, multiply with the triple-loop matmul.
  Tensor xq_t(x.shape()), wq_t(w.shape());
  double min_v = x[0], max_v = x[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    min_v = std::min(min_v, x[i]);
    max_v = std::max(max_v, x[i]);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    xq_t[i] = oracle::quantize_asym(x[i], min_v, max_v, 4);
  }
  for (std::size_t f = 0; f < 4; ++f) {
    double amax = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      amax = std::max(amax, std::fabs(w.at(i, f)));
    }
    for (std::size_t i = 0; i < 6; ++i) {
      wq_t.at(i, f) = oracle::quantize_sym(w.at(i, f), amax, 4);
    }
  }
  const Tensor diff =
      oracle::matmul(x, w) - oracle::matmul(xq_t, wq_t);
  double want = 0.0;
  for (std::size_t i = 0; i < diff.size(); ++i) want += diff[i] * diff[i];
  want *= w_i * w_i;
  REQUIRE(got == Catch::Approx(want).epsilon(1e-12));
}
