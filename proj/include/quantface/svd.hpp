#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Thin singular value decomposition A (m x n) = U * diag(sigma) * V^T with
// U (m x q), sigma (q), V (n x q), q = min(m, n).  Singular values are
// sorted in non-increasing order.
struct SvdResult {
  Tensor u;
  std::vector<double> sigma;
  Tensor v;
};

namespace detail {

// One-sided Jacobi (Hestenes) on the columns of a tall-or-square matrix
// (m >= n).  Rotates column pairs until every pair is numerically
// orthogonal, then reads off sigma_j = ||a_j|| and u_j = a_j / sigma_j.
inline SvdResult jacobi_svd_tall(const Tensor& a_in) {
  const std::size_t m = a_in.dim(0), n = a_in.dim(1);
  Tensor a = a_in;
  Tensor v = Tensor::identity(n);

  const int max_sweeps = 100;
  const double tol = 1e-12;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double ip = a.at(i, p), iq = a.at(i, q);
          app += ip * ip;
          aqq += iq * iq;
          apq += ip * iq;
        }
        off = std::max(off, std::fabs(apq) /
                                std::max(std::sqrt(app * aqq), 1e-300));
        if (std::fabs(apq) <= tol * std::sqrt(app * aqq)) continue;

        // Classic Jacobi rotation annihilating the (p, q) inner product.
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double ip = a.at(i, p), iq = a.at(i, q);
          a.at(i, p) = c * ip - s * iq;
          a.at(i, q) = s * ip + c * iq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = c * vp - s * vq;
          v.at(i, q) = s * vp + c * vq;
        }
      }
    }
    if (off < tol) break;
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm_sq += a.at(i, j) * a.at(i, j);
    sigma[j] = std::sqrt(norm_sq);
  }

  // Sort by descending singular value (stable so equal values keep column
  // order, which keeps the factorization deterministic).
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i,
                                                   std::size_t j) {
    return sigma[i] > sigma[j];
  });

  Tensor u({m, n});
  Tensor v_sorted({n, n});
  std::vector<double> sigma_sorted(n);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    sigma_sorted[jj] = sigma[j];
    for (std::size_t i = 0; i < n; ++i) v_sorted.at(i, jj) = v.at(i, j);
    if (sigma[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) u.at(i, jj) = a.at(i, j) / sigma[j];
    }
  }

  // Zero singular values leave null columns in U; complete them to an
  // orthonormal set deterministically by Gram-Schmidt over the standard
  // basis vectors in index order.
  for (std::size_t jj = 0; jj < n; ++jj) {
    if (sigma_sorted[jj] > 0.0) continue;
    for (std::size_t basis = 0; basis < m; ++basis) {
      std::vector<double> cand(m, 0.0);
      cand[basis] = 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < m; ++i) dot += cand[i] * u.at(i, k);
        for (std::size_t i = 0; i < m; ++i) cand[i] -= dot * u.at(i, k);
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-8) {
        for (std::size_t i = 0; i < m; ++i) u.at(i, jj) = cand[i] / norm;
        break;
      }
    }
  }

  return SvdResult{std::move(u), std::move(sigma_sorted),
                   std::move(v_sorted)};
}

}  // namespace detail

// Thin SVD for any shape.  Wide matrices are handled by factoring the
// transpose and swapping U and V.
inline SvdResult thin_svd(const Tensor& a) {
  if (a.rank() != 2) {
    throw Error(ErrorKind::Dimension, "thin_svd requires a rank-2 tensor");
  }
  if (a.dim(0) == 0 || a.dim(1) == 0) {
    throw Error(ErrorKind::Dimension, "thin_svd requires a non-empty matrix");
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i])) {
      throw Error(ErrorKind::Numerical, "thin_svd input is not finite");
    }
  }
  if (a.dim(0) >= a.dim(1)) {
    return detail::jacobi_svd_tall(a);
  }
  SvdResult r = detail::jacobi_svd_tall(transpose(a));
  return SvdResult{std::move(r.v), std::move(r.sigma), std::move(r.u)};
}

// Best rank-r approximation factors: L1 = U_{:, :r} * diag(sigma_{:r}),
// L2 = V_{:, :r}^T, so that L1 * L2 is the Eckart-Young optimum.
inline std::pair<Tensor, Tensor> truncated_factors(const SvdResult& svd,
                                                   std::size_t r) {
  const std::size_t m = svd.u.dim(0), q = svd.u.dim(1), n = svd.v.dim(0);
  if (r == 0 || r > q) {
    throw Error(ErrorKind::Argument, "truncation rank out of range");
  }
  Tensor l1({m, r});
  Tensor l2({r, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      l1.at(i, j) = svd.u.at(i, j) * svd.sigma[j];
    }
  }
  for (std::size_t j = 0; j < r; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      l2.at(j, i) = svd.v.at(i, j);
    }
  }
  return {std::move(l1), std::move(l2)};
}

}  // namespace quantface
