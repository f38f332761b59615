#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/rng.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

inline bool is_power_of_two(std::size_t n) {
  return n != 0 && (n & (n - 1)) == 0;
}

// In-place fast Walsh-Hadamard transform over a length-n slice (n a power of
// two), natural (Hadamard) ordering.  When `normalize` is set the result is
// scaled by 1/sqrt(n), making the transform orthonormal and involutive.
inline void fwht(double* data, std::size_t n, bool normalize) {
  if (!is_power_of_two(n)) {
    throw Error(ErrorKind::UnsupportedSize,
                "Walsh-Hadamard transform length must be a power of two");
  }
  for (std::size_t half = 1; half < n; half <<= 1) {
    for (std::size_t block = 0; block < n; block += half << 1) {
      for (std::size_t i = block; i < block + half; ++i) {
        const double a = data[i];
        const double b = data[i + half];
        data[i] = a + b;
        data[i + half] = a - b;
      }
    }
  }
  if (normalize) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) data[i] *= inv;
  }
}

inline void fwht(std::vector<double>& data, bool normalize = true) {
  fwht(data.data(), data.size(), normalize);
}

// Seeded +/-1 diagonal for the randomized Hadamard transform, one sign per
// channel, drawn from the top bit of successive SplitMix64 outputs.
inline std::vector<double> random_signs(std::uint64_t seed, std::size_t n) {
  SplitMix64 rng(seed);
  std::vector<double> signs(n);
  for (std::size_t i = 0; i < n; ++i) {
    signs[i] = (rng.next() >> 63) ? -1.0 : 1.0;
  }
  return signs;
}

// Randomized Hadamard transform H = (1/sqrt(n)) * H_walsh * diag(signs):
// flip signs first, then apply the normalized Walsh-Hadamard butterfly.
// Orthogonal, so rht_transpose(rht_forward(x)) == x up to rounding.
inline void rht_forward(double* data, std::size_t n,
                        const std::vector<double>& signs) {
  if (signs.size() != n) {
    throw Error(ErrorKind::Dimension, "sign diagonal length mismatch");
  }
  for (std::size_t i = 0; i < n; ++i) data[i] *= signs[i];
  fwht(data, n, /*normalize=*/true);
}

// Transpose (= inverse) of the randomized Hadamard transform:
// H^T = diag(signs) * (1/sqrt(n)) * H_walsh.
inline void rht_transpose(double* data, std::size_t n,
                          const std::vector<double>& signs) {
  if (signs.size() != n) {
    throw Error(ErrorKind::Dimension, "sign diagonal length mismatch");
  }
  fwht(data, n, /*normalize=*/true);
  for (std::size_t i = 0; i < n; ++i) data[i] *= signs[i];
}

// Dense n x n matrix of the randomized Hadamard transform, H[i][j] being the
// coefficient applied to input j.  Used by folding (and by tests as an
// oracle target); the online path never materializes it.
inline Tensor rht_matrix(std::size_t n, const std::vector<double>& signs) {
  if (!is_power_of_two(n)) {
    throw Error(ErrorKind::UnsupportedSize,
                "Walsh-Hadamard transform length must be a power of two");
  }
  if (signs.size() != n) {
    throw Error(ErrorKind::Dimension, "sign diagonal length mismatch");
  }
  Tensor h({n, n});
  std::vector<double> basis(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(basis.begin(), basis.end(), 0.0);
    basis[j] = 1.0;
    rht_forward(basis.data(), n, signs);
    for (std::size_t i = 0; i < n; ++i) h.at(i, j) = basis[i];
  }
  return h;
}

}  // namespace quantface
