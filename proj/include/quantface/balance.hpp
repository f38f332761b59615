#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/hadamard.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Channel-balancing state for one convolution layer.
struct BalanceParams {
  std::vector<double> scales;      // per input channel, all > 0
  double alpha = 0.5;
  std::uint64_t hadamard_seed = 0;
  std::size_t hadamard_size = 0;   // C when rotation is folded, else 0
  bool folded = false;
  std::vector<double> signs;       // diag of the seeded sign flip
};

struct BalancedConvLayer {
  ConvSpec spec;
  Tensor kernel;       // original weights {F, C, k, k}
  Tensor kernel_t;     // transformed weights (scaled, then rotated)
  BalanceParams balance;
  bool scaled = false;
};

inline BalancedConvLayer make_balanced_layer(const ConvSpec& spec,
                                             Tensor kernel) {
  BalancedConvLayer layer;
  layer.spec = spec;
  layer.kernel_t = kernel;
  layer.kernel = std::move(kernel);
  return layer;
}

// Per-channel activation maxima over a calibration batch of {C, H, W} maps.
inline std::vector<double> channel_maxabs(const std::vector<Tensor>& batch,
                                          std::size_t channels) {
  if (batch.empty()) {
    throw Error(ErrorKind::Argument, "calibration batch is empty");
  }
  std::vector<double> maxima(channels, 0.0);
  for (const Tensor& x : batch) {
    if (x.rank() != 3 || x.dim(0) != channels) {
      throw Error(ErrorKind::Dimension, "calibration channel count mismatch");
    }
    const std::size_t plane = x.dim(1) * x.dim(2);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        maxima[c] = std::max(maxima[c], std::fabs(x[c * plane + i]));
      }
    }
  }
  return maxima;
}

// Per-input-channel kernel maxima: max over output channels and taps.
inline std::vector<double> kernel_channel_maxabs(const Tensor& kernel) {
  if (kernel.rank() != 4) {
    throw Error(ErrorKind::Dimension, "kernel must be rank 4");
  }
  const std::size_t f_count = kernel.dim(0), c_count = kernel.dim(1),
                    taps = kernel.dim(2) * kernel.dim(3);
  std::vector<double> maxima(c_count, 0.0);
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t t = 0; t < taps; ++t) {
        maxima[c] = std::max(
            maxima[c], std::fabs(kernel[(f * c_count + c) * taps + t]));
      }
    }
  }
  return maxima;
}

// Difficulty-migration scales: s_c = max|X_c|^alpha / max|K_c|^(1-alpha).
// A zero maximum on either side is replaced by 1 before exponentiation, so
// dead channels keep scale 1.
inline std::vector<double> compute_scales(const std::vector<Tensor>& x_calib,
                                          const Tensor& kernel, double alpha) {
  if (kernel.rank() != 4) {
    throw Error(ErrorKind::Dimension, "kernel must be rank 4");
  }
  const std::size_t channels = kernel.dim(1);
  const std::vector<double> x_max = channel_maxabs(x_calib, channels);
  const std::vector<double> k_max = kernel_channel_maxabs(kernel);
  std::vector<double> scales(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const double xm = x_max[c] > 0.0 ? x_max[c] : 1.0;
    const double km = k_max[c] > 0.0 ? k_max[c] : 1.0;
    scales[c] = std::pow(xm, alpha) / std::pow(km, 1.0 - alpha);
  }
  return scales;
}

// Folds the scales into the kernel: K'[f,c,.,.] = K[f,c,.,.] * s_c.  The
// matching division of activation channel c by s_c happens online, fused
// with the rotation into a single per-channel multiply.
inline void apply_scaling(BalancedConvLayer& layer,
                          const std::vector<double>& scales) {
  if (layer.scaled || layer.balance.folded) {
    throw Error(ErrorKind::State, "layer is already balanced");
  }
  if (scales.size() != layer.spec.in_channels) {
    throw Error(ErrorKind::Dimension, "scale count mismatch");
  }
  for (double s : scales) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw Error(ErrorKind::Numerical, "scales must be finite and positive");
    }
  }
  const std::size_t f_count = layer.spec.out_channels,
                    c_count = layer.spec.in_channels,
                    taps = layer.spec.kernel * layer.spec.kernel;
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t c = 0; c < c_count; ++c) {
      for (std::size_t t = 0; t < taps; ++t) {
        layer.kernel_t[(f * c_count + c) * taps + t] *= scales[c];
      }
    }
  }
  layer.balance.scales = scales;
  layer.scaled = true;
}

// Rotates the scaled kernel channel-wise: for every output channel f and tap
// (u, v), the C-vector K'[f, :, u, v] is replaced by H * K'[f, :, u, v] with
// H = (1/sqrt(C)) * H_walsh * diag(random_signs(seed, C)).
inline void fold_rotation(BalancedConvLayer& layer, std::uint64_t seed) {
  if (layer.balance.folded) {
    throw Error(ErrorKind::State, "rotation already folded");
  }
  const std::size_t c_count = layer.spec.in_channels;
  if (!is_power_of_two(c_count)) {
    throw Error(ErrorKind::UnsupportedSize,
                "rotation needs a power-of-two channel count");
  }
  layer.balance.hadamard_seed = seed;
  layer.balance.hadamard_size = c_count;
  layer.balance.signs = random_signs(seed, c_count);

  const std::size_t f_count = layer.spec.out_channels,
                    taps = layer.spec.kernel * layer.spec.kernel;
  std::vector<double> column(c_count);
  for (std::size_t f = 0; f < f_count; ++f) {
    for (std::size_t t = 0; t < taps; ++t) {
      for (std::size_t c = 0; c < c_count; ++c) {
        column[c] = layer.kernel_t[(f * c_count + c) * taps + t];
      }
      rht_forward(column.data(), c_count, layer.balance.signs);
      for (std::size_t c = 0; c < c_count; ++c) {
        layer.kernel_t[(f * c_count + c) * taps + t] = column[c];
      }
    }
  }
  layer.balance.folded = true;
}

// Rotation-only online transform: every channel vector x[:, i, j] becomes
// H * x[:, i, j].  Isometric since H is orthogonal.
inline Tensor online_rotate(const Tensor& x, const BalanceParams& balance) {
  if (!balance.folded) {
    throw Error(ErrorKind::State, "rotation has not been folded");
  }
  if (x.rank() != 3 || x.dim(0) != balance.hadamard_size) {
    throw Error(ErrorKind::Dimension, "online rotation shape mismatch");
  }
  const std::size_t c_count = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out = x;
  std::vector<double> column(c_count);
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < c_count; ++c) {
      column[c] = out[c * plane + i];
    }
    rht_forward(column.data(), c_count, balance.signs);
    for (std::size_t c = 0; c < c_count; ++c) {
      out[c * plane + i] = column[c];
    }
  }
  return out;
}

// Full online input transform for a balanced layer: divide channel c by s_c,
// then rotate when a rotation is folded.  The divide and the sign flip fuse
// into one diagonal, so the runtime cost is the Hadamard butterfly plus a
// single per-channel multiply.
inline Tensor online_input_transform(const Tensor& x,
                                     const BalancedConvLayer& layer) {
  if (!layer.scaled && !layer.balance.folded) return x;
  if (x.rank() != 3 || x.dim(0) != layer.spec.in_channels) {
    throw Error(ErrorKind::Dimension, "online transform shape mismatch");
  }
  const std::size_t c_count = x.dim(0), plane = x.dim(1) * x.dim(2);
  Tensor out = x;
  if (layer.scaled) {
    for (std::size_t c = 0; c < c_count; ++c) {
      const double inv = 1.0 / layer.balance.scales[c];
      for (std::size_t i = 0; i < plane; ++i) {
        out[c * plane + i] *= inv;
      }
    }
  }
  if (layer.balance.folded) {
    out = online_rotate(out, layer.balance);
  }
  return out;
}

// Mult-adds of the online RHT for one conv layer: one butterfly per output
// position, C * log2(C) each.
inline std::size_t rht_layer_ops(std::size_t out_h, std::size_t out_w,
                                 std::size_t channels) {
  std::size_t log2c = 0;
  for (std::size_t v = channels; v > 1; v >>= 1) ++log2c;
  return out_h * out_w * channels * log2c;
}

// Per-layer compute summary used for the overhead ratio.
struct ConvOpStats {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  std::size_t in_channels = 0;
  std::size_t mult_adds = 0;  // H_out * W_out * F * C * K_h * K_w
  bool rotated = false;
};

// Fraction of extra mult-adds the online rotations add on top of the
// model's convolution compute.
inline double rht_overhead(const std::vector<ConvOpStats>& layers) {
  std::size_t rht = 0, conv = 0;
  for (const ConvOpStats& l : layers) {
    conv += l.mult_adds;
    if (l.rotated) rht += rht_layer_ops(l.out_h, l.out_w, l.in_channels);
  }
  if (conv == 0) return 0.0;
  return static_cast<double>(rht) / static_cast<double>(conv);
}

}  // namespace quantface
