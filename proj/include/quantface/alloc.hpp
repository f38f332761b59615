#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/quant.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Per-layer metric deltas with only that layer's activation quantized at the
// probe bit width, everything else full precision.
struct SensitivityProfile {
  int probe_bits = 4;
  std::vector<double> delta;
};

// DeltaFn: (layer index, bits) -> metric delta against the FP baseline.
template <typename DeltaFn>
SensitivityProfile profile_sensitivity(std::size_t layers, int probe_bits,
                                       DeltaFn&& delta_at) {
  check_bits(probe_bits);
  SensitivityProfile profile;
  profile.probe_bits = probe_bits;
  profile.delta.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    profile.delta.push_back(delta_at(i, probe_bits));
  }
  return profile;
}

// Escalation result: the bit width at which each layer's solo-quantized
// metric delta first drops within epsilon, and the perceptual weight
// w_i = 2^{B_i} - 1 built from it.
struct PerceptualWeights {
  std::vector<int> bits;
  std::vector<double> w;
  std::size_t evaluations = 0;
};

// Per layer, walk b = 2..b_max and stop at the first delta <= epsilon; a
// layer that never fits gets b_max.  At most (b_max - 1) evaluations per
// layer since {2, ..., b_max} has b_max - 1 members.
template <typename DeltaFn>
PerceptualWeights assign_weights(std::size_t layers, double epsilon,
                                 int b_max, DeltaFn&& delta_at) {
  if (!(epsilon > 0.0)) {
    throw Error(ErrorKind::Argument, "epsilon must be positive");
  }
  if (b_max < 2 || b_max > 8) {
    throw Error(ErrorKind::Argument, "maximum bit width must be in [2, 8]");
  }
  PerceptualWeights out;
  out.bits.reserve(layers);
  out.w.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) {
    int chosen = b_max;
    for (int b = 2; b <= b_max; ++b) {
      ++out.evaluations;
      if (delta_at(i, b) <= epsilon) {
        chosen = b;
        break;
      }
    }
    out.bits.push_back(chosen);
    out.w.push_back(std::ldexp(1.0, chosen) - 1.0);
  }
  return out;
}

// Weighted layer proxy loss w_i^2 * || X W - Q(X) Q(W) ||_F^2 on the im2col
// matrices (X: positions x depth, W: depth x out-channels).
inline double layer_loss(double w_i, const Tensor& w, const Tensor& x,
                         const std::vector<QuantParams>& qparams_w,
                         const QuantParams& qparams_x) {
  const Tensor y_ref = matmul(x, w);
  const Tensor y_q = matmul(fake_quantize(x, qparams_x),
                            fake_quantize_per_output_channel(w, qparams_w));
  return w_i * w_i * frobenius_norm_sq(y_ref - y_q);
}

// Multiple-choice knapsack instance: one bit choice per layer, activation
// storage cost M_{i,b} = b * elements_i, budget in total activation bits.
struct AllocProblem {
  std::vector<int> candidate_bits;        // ascending, e.g. {3, 4, 5, 6}
  std::vector<std::size_t> elements;      // activation element count, layer i
  std::vector<std::vector<double>> loss;  // loss[i][j], j indexes candidates
  double budget = 0.0;
};

struct AllocSolution {
  std::vector<int> bits;
  double objective = 0.0;
  double total_cost = 0.0;
  double average_bits = 0.0;
};

namespace detail {

inline void validate_problem(const AllocProblem& p) {
  const std::size_t n = p.elements.size();
  if (n == 0) throw Error(ErrorKind::Argument, "allocation needs layers");
  if (p.candidate_bits.empty()) {
    throw Error(ErrorKind::Argument, "allocation needs candidate bit widths");
  }
  for (std::size_t j = 0; j < p.candidate_bits.size(); ++j) {
    if (p.candidate_bits[j] <= 0 ||
        (j > 0 && p.candidate_bits[j] <= p.candidate_bits[j - 1])) {
      throw Error(ErrorKind::Argument,
                  "candidate bits must be positive and strictly ascending");
    }
  }
  if (p.loss.size() != n) {
    throw Error(ErrorKind::Dimension, "loss table layer count mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (p.elements[i] == 0) {
      throw Error(ErrorKind::Argument, "layer has zero activation elements");
    }
    if (p.loss[i].size() != p.candidate_bits.size()) {
      throw Error(ErrorKind::Dimension, "loss table row width mismatch");
    }
    for (double l : p.loss[i]) {
      if (!(l >= 0.0) || !std::isfinite(l)) {
        throw Error(ErrorKind::Numerical, "losses must be finite and >= 0");
      }
    }
  }
}

// Canonical objective: per-layer losses summed left to right, so the exact
// solver and the exhaustive oracle report float-identical values.
inline double assignment_objective(const AllocProblem& p,
                                   const std::vector<std::size_t>& choice) {
  double obj = 0.0;
  for (std::size_t i = 0; i < p.elements.size(); ++i) {
    obj += p.loss[i][choice[i]];
  }
  return obj;
}

inline AllocSolution finish_solution(const AllocProblem& p,
                                     const std::vector<std::size_t>& choice) {
  AllocSolution sol;
  sol.bits.reserve(choice.size());
  double cost = 0.0, elems = 0.0;
  for (std::size_t i = 0; i < choice.size(); ++i) {
    const int b = p.candidate_bits[choice[i]];
    sol.bits.push_back(b);
    cost += static_cast<double>(b) * static_cast<double>(p.elements[i]);
    elems += static_cast<double>(p.elements[i]);
  }
  sol.objective = assignment_objective(p, choice);
  sol.total_cost = cost;
  sol.average_bits = cost / elems;
  return sol;
}

}  // namespace detail

// Exact solver.  Element counts are reduced by their GCD so the dynamic
// program runs over integral cost units; exactness is preserved because all
// costs are multiples of that unit.  Tie-break among optimal assignments:
// prefer higher bits at the lowest-index layer (lexicographic from layer 0).
inline AllocSolution solve_allocation(const AllocProblem& p) {
  detail::validate_problem(p);
  const std::size_t n = p.elements.size();
  const std::size_t k = p.candidate_bits.size();

  std::size_t unit = 0;
  for (std::size_t e : p.elements) unit = std::gcd(unit, e);
  std::vector<std::size_t> red(n);
  for (std::size_t i = 0; i < n; ++i) red[i] = p.elements[i] / unit;

  // Reduced-unit costs and budget.  An assignment is feasible iff its
  // integral reduced cost is <= floor(budget / unit).
  std::size_t min_cost = 0, max_cost = 0;
  for (std::size_t i = 0; i < n; ++i) {
    min_cost += static_cast<std::size_t>(p.candidate_bits.front()) * red[i];
    max_cost += static_cast<std::size_t>(p.candidate_bits.back()) * red[i];
  }
  const double budget_units_real =
      p.budget / static_cast<double>(unit) + 1e-9;
  if (budget_units_real < static_cast<double>(min_cost)) {
    throw Error(ErrorKind::Infeasible,
                "budget below minimum achievable cost of " +
                    std::to_string(min_cost * unit) + " activation bits");
  }
  const std::size_t cap = std::min(
      static_cast<std::size_t>(budget_units_real), max_cost);

  // g[i][c]: minimal objective for layers i..n-1 within cost c, summed
  // right to left; used only to steer reconstruction.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> g(n + 1,
                                     std::vector<double>(cap + 1, inf));
  std::fill(g[n].begin(), g[n].end(), 0.0);
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t c = 0; c <= cap; ++c) {
      double best = inf;
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t m =
            static_cast<std::size_t>(p.candidate_bits[j]) * red[i];
        if (m > c) continue;
        const double v = p.loss[i][j] + g[i + 1][c - m];
        if (v < best) best = v;
      }
      g[i][c] = best;
    }
  }

  // Walk layers first to last, taking the highest bit consistent with the
  // optimal objective; this realizes the documented tie-break.
  std::vector<std::size_t> choice(n);
  std::size_t c = cap;
  for (std::size_t i = 0; i < n; ++i) {
    bool found = false;
    for (std::size_t j = k; j-- > 0;) {
      const std::size_t m =
          static_cast<std::size_t>(p.candidate_bits[j]) * red[i];
      if (m > c) continue;
      if (p.loss[i][j] + g[i + 1][c - m] == g[i][c]) {
        choice[i] = j;
        c -= m;
        found = true;
        break;
      }
    }
    if (!found) {
      throw Error(ErrorKind::State, "allocation reconstruction failed");
    }
  }
  return detail::finish_solution(p, choice);
}

// Exhaustive oracle, same tie-break.  Exponential in the layer count, so it
// refuses anything beyond 12 layers.
inline AllocSolution brute_force_allocation(const AllocProblem& p) {
  detail::validate_problem(p);
  const std::size_t n = p.elements.size();
  if (n > 12) {
    throw Error(ErrorKind::Argument,
                "brute force is limited to 12 layers");
  }
  const std::size_t k = p.candidate_bits.size();
  std::vector<std::size_t> choice(n, 0), best;
  double best_obj = std::numeric_limits<double>::infinity();
  bool feasible_found = false;
  double min_cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    min_cost += static_cast<double>(p.candidate_bits.front()) *
                static_cast<double>(p.elements[i]);
  }
  if (min_cost > p.budget) {
    throw Error(ErrorKind::Infeasible,
                "budget below minimum achievable cost of " +
                    std::to_string(static_cast<std::size_t>(min_cost)) +
                    " activation bits");
  }
  while (true) {
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cost += static_cast<double>(p.candidate_bits[choice[i]]) *
              static_cast<double>(p.elements[i]);
    }
    if (cost <= p.budget) {
      const double obj = detail::assignment_objective(p, choice);
      bool better = false;
      if (!feasible_found || obj < best_obj) {
        better = true;
      } else if (obj == best_obj) {
        // Equal objective: prefer higher bits at the lowest-index layer.
        for (std::size_t i = 0; i < n; ++i) {
          if (choice[i] != best[i]) {
            better = choice[i] > best[i];
            break;
          }
        }
      }
      if (better) {
        best = choice;
        best_obj = obj;
        feasible_found = true;
      }
    }
    // Odometer increment over the k^n assignment space.
    std::size_t pos = n;
    while (pos-- > 0) {
      if (++choice[pos] < k) break;
      choice[pos] = 0;
      if (pos == 0) return detail::finish_solution(p, best);
    }
  }
}

inline double average_bits(const AllocSolution& sol, const AllocProblem& p) {
  if (sol.bits.size() != p.elements.size()) {
    throw Error(ErrorKind::Dimension, "solution layer count mismatch");
  }
  double cost = 0.0, elems = 0.0;
  for (std::size_t i = 0; i < sol.bits.size(); ++i) {
    cost += static_cast<double>(sol.bits[i]) *
            static_cast<double>(p.elements[i]);
    elems += static_cast<double>(p.elements[i]);
  }
  return cost / elems;
}

// Enforces the "more bits never hurt" invariant on a measured loss table by
// clamping any increase to the previous (lower-bit) value.  Returns the
// (layer, candidate index) pairs that were clamped so callers can log them.
inline std::vector<std::pair<std::size_t, std::size_t>>
clamp_loss_monotonicity(AllocProblem& p) {
  std::vector<std::pair<std::size_t, std::size_t>> clamped;
  for (std::size_t i = 0; i < p.loss.size(); ++i) {
    for (std::size_t j = 1; j < p.loss[i].size(); ++j) {
      if (p.loss[i][j] > p.loss[i][j - 1]) {
        p.loss[i][j] = p.loss[i][j - 1];
        clamped.emplace_back(i, j);
      }
    }
  }
  return clamped;
}

}  // namespace quantface
