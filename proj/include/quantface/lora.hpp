#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/quant.hpp"
#include "quantface/rng.hpp"
#include "quantface/svd.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Dual low-rank branches attached to one frozen quantized layer.
//   SVD branch          L1 (d x r), L2 (r x d')  - initialized from the top-r
//                       singular triplets of the weight matrix.
//   Distillation branch A (d x r), B (r x d')    - Gaussian / zero init.
//   Residual            R_q = Q(W - L1 L2), frozen with its quantizers.
struct LowRankBranches {
  Tensor l1, l2;
  Tensor a, b;
  std::size_t rank = 0;
  Tensor r_q;                            // fake-quantized residual (d x d')
  std::vector<QuantParams> r_qparams;    // per-output-channel, frozen
  Tensor svd_init_prod;                  // snapshot of L1 L2 at init
};

// Splits W into the best rank-r product plus a quantized residual:
// L1 = U * diag(sigma_{:r}), L2 = V_{:r,:}^T, R_q = Q(W - L1 L2) with
// per-output-channel symmetric grids at `weight_bits`.  A and B stay empty
// until init_lora_branch runs.
inline LowRankBranches init_svd_branch(const Tensor& w, std::size_t r,
                                       int weight_bits,
                                       QuantMode mode = QuantMode::Real) {
  if (w.rank() != 2) {
    throw Error(ErrorKind::Dimension, "weight matrix must be rank 2");
  }
  if (r == 0 || r > std::min(w.dim(0), w.dim(1))) {
    throw Error(ErrorKind::Argument, "rank exceeds weight dimensions");
  }
  const SvdResult svd = thin_svd(w);
  auto [l1, l2] = truncated_factors(svd, r);

  LowRankBranches out;
  out.rank = r;
  out.svd_init_prod = matmul(l1, l2);
  const Tensor residual = w - out.svd_init_prod;
  out.r_qparams = calibrate_per_output_channel(residual, weight_bits);
  out.r_q = fake_quantize_per_output_channel(residual, out.r_qparams, mode);
  out.l1 = std::move(l1);
  out.l2 = std::move(l2);
  return out;
}

// Distillation branch init: A is seeded Gaussian scaled by 1/sqrt(r), B is
// zero, so the branch contributes nothing at step 0.
inline void init_lora_branch(LowRankBranches& branches, std::size_t d,
                             std::size_t d_out, std::uint64_t seed) {
  const std::size_t r = branches.rank;
  if (r == 0) {
    throw Error(ErrorKind::State, "SVD branch must be initialized first");
  }
  SplitMix64 rng(seed);
  Tensor a({d, r});
  const double scale = 1.0 / std::sqrt(static_cast<double>(r));
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.next_gaussian() * scale;
  }
  branches.a = std::move(a);
  branches.b = Tensor({r, d_out});
}

// Intermediate products saved by the forward pass for reverse mode.
struct QdLoraCache {
  Tensor x;      // unquantized input
  Tensor xa;     // X * A
  Tensor xl1;    // X * L1
  Tensor mask;   // straight-through indicator of the input quantizer
  bool valid = false;
};

// Y = X A B + X L1 L2 + Q(X) R_q, summed in that order.  The low-rank paths
// read the unquantized input; only the residual path sees Q(X).
inline Tensor forward_qdlora(const Tensor& x, const LowRankBranches& branches,
                             const QuantParams& act_qparams,
                             QuantMode mode = QuantMode::Real,
                             QdLoraCache* cache = nullptr) {
  if (x.rank() != 2 || x.dim(1) != branches.l1.dim(0)) {
    throw Error(ErrorKind::Dimension, "input width mismatch");
  }
  const Tensor xq = fake_quantize(x, act_qparams, mode);
  const Tensor xa = matmul(x, branches.a);
  const Tensor xl1 = matmul(x, branches.l1);
  Tensor y = matmul(xa, branches.b) + matmul(xl1, branches.l2) +
             matmul(xq, branches.r_q);
  if (cache != nullptr) {
    cache->x = x;
    cache->xa = xa;
    cache->xl1 = xl1;
    cache->mask = mode == QuantMode::Off
                      ? Tensor::full(x.shape(), 1.0)
                      : ste_mask(x, act_qparams);
    cache->valid = true;
  }
  return y;
}

struct QdLoraGrads {
  Tensor dl1, dl2, da, db;
  Tensor dx;
};

// Exact reverse-mode gradients of the branch parameters and the input.  The
// residual path is a constant w.r.t. the branches; its input gradient flows
// through the straight-through mask.  With mu > 0 the SVD branch also feels
// the drift penalty mu * ||L1 L2 - L1_0 L2_0||_F^2.
inline QdLoraGrads backward_qdlora(const Tensor& dy,
                                   const LowRankBranches& branches,
                                   const QdLoraCache& cache,
                                   double mu = 0.0) {
  if (!cache.valid) {
    throw Error(ErrorKind::State, "backward called without a forward cache");
  }
  QdLoraGrads g;
  const Tensor dy_bt = matmul(dy, transpose(branches.b));
  const Tensor dy_l2t = matmul(dy, transpose(branches.l2));
  g.db = matmul(transpose(cache.xa), dy);
  g.da = matmul(transpose(cache.x), dy_bt);
  g.dl2 = matmul(transpose(cache.xl1), dy);
  g.dl1 = matmul(transpose(cache.x), dy_l2t);
  if (mu > 0.0) {
    const Tensor drift =
        matmul(branches.l1, branches.l2) - branches.svd_init_prod;
    g.dl1 = g.dl1 + (2.0 * mu) * matmul(drift, transpose(branches.l2));
    g.dl2 = g.dl2 + (2.0 * mu) * matmul(transpose(branches.l1), drift);
  }
  Tensor dx_quant = matmul(dy, transpose(branches.r_q));
  for (std::size_t i = 0; i < dx_quant.size(); ++i) {
    dx_quant[i] *= cache.mask[i];
  }
  g.dx = matmul(dy_bt, transpose(branches.a)) +
         matmul(dy_l2t, transpose(branches.l1)) + dx_quant;
  return g;
}

// Deployment merge: L1_m = [L1 | A], L2_m = [L2 ; B].  Matmul accumulates
// the shared dimension left to right, so the merged product sums the SVD
// path's terms first and then the distillation path's, matching the dual
// forward's "SVD + LoRA" addition up to float re-association.
inline std::pair<Tensor, Tensor> merge_branches(
    const LowRankBranches& branches) {
  if (branches.a.size() == 0 || branches.b.size() == 0) {
    throw Error(ErrorKind::State, "distillation branch is not initialized");
  }
  const std::size_t d = branches.l1.dim(0), r = branches.rank,
                    d_out = branches.l2.dim(1);
  Tensor l1_m({d, 2 * r});
  Tensor l2_m({2 * r, d_out});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      l1_m.at(i, j) = branches.l1.at(i, j);
      l1_m.at(i, r + j) = branches.a.at(i, j);
    }
  }
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < d_out; ++i) {
      l2_m.at(j, i) = branches.l2.at(j, i);
      l2_m.at(r + j, i) = branches.b.at(j, i);
    }
  }
  return {std::move(l1_m), std::move(l2_m)};
}

}  // namespace quantface
