#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// How quantized operators evaluate:
//   Off       - bitwise pass-through, no rounding, no clamping.
//   Real      - full fake quantization (scale, round to nearest even, clamp).
//   ClampOnly - scale and clamp but skip rounding.  This is the continuous
//               surrogate whose exact derivative is the straight-through
//               mask, so finite differences of a ClampOnly forward agree
//               with the analytic backward pass.
enum class QuantMode { Off, Real, ClampOnly };

// Affine quantizer grid: codes live in [lo, hi], values on the grid are
// value = scale * code + zero.
struct QuantParams {
  double scale = 1.0;
  double zero = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int bits = 8;
  bool symmetric = true;
};

inline void check_bits(int bits) {
  if (bits < 2 || bits > 16) {
    throw Error(ErrorKind::Argument, "bit width must be in [2, 16]");
  }
}

// Calibration from a known value range.
//   symmetric:  codes in [-2^(b-1), 2^(b-1)-1], zero = 0,
//               scale = max|x| / (2^(b-1)-1)
//   asymmetric: codes in [0, 2^b-1], zero = min(x),
//               scale = (max(x) - min(x)) / (2^b - 1)
// A constant range degenerates to scale 1 with zero at the constant
// (zero for symmetric), which round-trips the input exactly.
inline QuantParams calibrate_from_range(double min_v, double max_v, int bits,
                                        bool symmetric) {
  check_bits(bits);
  if (!std::isfinite(min_v) || !std::isfinite(max_v) || min_v > max_v) {
    throw Error(ErrorKind::Numerical, "invalid calibration range");
  }
  QuantParams p;
  p.bits = bits;
  p.symmetric = symmetric;
  if (symmetric) {
    p.lo = -std::ldexp(1.0, bits - 1);
    p.hi = std::ldexp(1.0, bits - 1) - 1.0;
    p.zero = 0.0;
    const double amax = std::max(std::fabs(min_v), std::fabs(max_v));
    p.scale = amax > 0.0 ? amax / p.hi : 1.0;
  } else {
    p.lo = 0.0;
    p.hi = std::ldexp(1.0, bits) - 1.0;
    p.zero = min_v;
    p.scale = max_v > min_v ? (max_v - min_v) / (p.hi - p.lo) : 1.0;
  }
  return p;
}

// Min/max calibration over all elements of a tensor.
inline QuantParams calibrate_minmax(const Tensor& x, int bits,
                                    bool symmetric) {
  check_bits(bits);
  if (x.size() == 0) {
    throw Error(ErrorKind::Argument, "cannot calibrate an empty tensor");
  }
  double min_v = x[0], max_v = x[0];
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i])) {
      throw Error(ErrorKind::Numerical, "non-finite value during calibration");
    }
    min_v = std::min(min_v, x[i]);
    max_v = std::max(max_v, x[i]);
  }
  return calibrate_from_range(min_v, max_v, bits, symmetric);
}

// Integer code for one value: clamp(round_half_even((x - z) / s), lo, hi).
inline double quantize_code(double x, const QuantParams& p) {
  const double t = (x - p.zero) / p.scale;
  // nearbyint under the default FP environment rounds half to even.
  return std::min(std::max(std::nearbyint(t), p.lo), p.hi);
}

// Fake-quantized value: decode(encode(x)) = s * code + z.
inline double quantize_value(double x, const QuantParams& p) {
  return p.scale * quantize_code(x, p) + p.zero;
}

// Clamp-only surrogate: rounding removed, clamping kept.  Clamps in value
// space so in-range values pass through bit-exactly; its derivative is
// exactly the straight-through pass mask.
inline double clamp_value(double x, const QuantParams& p) {
  const double lo_v = p.scale * p.lo + p.zero;
  const double hi_v = p.scale * p.hi + p.zero;
  return std::min(std::max(x, lo_v), hi_v);
}

// Straight-through estimator pass-through indicator: 1 where the scaled
// value lands inside [lo, hi] (so rounding, not clamping, applies), else 0.
inline double ste_pass(double x, const QuantParams& p) {
  const double t = (x - p.zero) / p.scale;
  return (t >= p.lo && t <= p.hi) ? 1.0 : 0.0;
}

inline Tensor fake_quantize(const Tensor& x, const QuantParams& p,
                            QuantMode mode = QuantMode::Real) {
  if (mode == QuantMode::Off) return x;
  Tensor out(x.shape());
  if (mode == QuantMode::Real) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = quantize_value(x[i], p);
    }
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = clamp_value(x[i], p);
    }
  }
  return out;
}

inline Tensor ste_mask(const Tensor& x, const QuantParams& p) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = ste_pass(x[i], p);
  return out;
}

// Per-output-channel symmetric quantization of a weight matrix W (D x F):
// each column f gets its own symmetric grid calibrated on that column.
inline std::vector<QuantParams> calibrate_per_output_channel(
    const Tensor& w, int bits) {
  if (w.rank() != 2) {
    throw Error(ErrorKind::Dimension,
                "per-channel calibration expects a rank-2 weight matrix");
  }
  check_bits(bits);
  const std::size_t d = w.dim(0), f_count = w.dim(1);
  std::vector<QuantParams> params(f_count);
  for (std::size_t f = 0; f < f_count; ++f) {
    QuantParams p;
    p.bits = bits;
    p.symmetric = true;
    p.lo = -std::ldexp(1.0, bits - 1);
    p.hi = std::ldexp(1.0, bits - 1) - 1.0;
    double amax = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = w.at(i, f);
      if (!std::isfinite(v)) {
        throw Error(ErrorKind::Numerical,
                    "non-finite value during calibration");
      }
      amax = std::max(amax, std::fabs(v));
    }
    p.scale = amax > 0.0 ? amax / p.hi : 1.0;
    params[f] = p;
  }
  return params;
}

inline Tensor fake_quantize_per_output_channel(
    const Tensor& w, const std::vector<QuantParams>& params,
    QuantMode mode = QuantMode::Real) {
  if (w.rank() != 2 || params.size() != w.dim(1)) {
    throw Error(ErrorKind::Dimension,
                "per-channel parameter count mismatch");
  }
  if (mode == QuantMode::Off) return w;
  Tensor out(w.shape());
  for (std::size_t f = 0; f < w.dim(1); ++f) {
    for (std::size_t i = 0; i < w.dim(0); ++i) {
      out.at(i, f) = mode == QuantMode::Real
                         ? quantize_value(w.at(i, f), params[f])
                         : clamp_value(w.at(i, f), params[f]);
    }
  }
  return out;
}

// Elementwise quantization error || x - quantize(x, p) ||_F^2.
inline double quant_error(const Tensor& x, const QuantParams& p) {
  return frobenius_norm_sq(x - fake_quantize(x, p));
}

}  // namespace quantface
