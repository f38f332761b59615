#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "quantface/error.hpp"
#include "quantface/rng.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Separable Gaussian blur with boundary renormalization: at the borders the
// kernel is re-normalized over in-bounds taps, so constant images stay
// constant.  Radius is ceil(3 sigma).
inline Tensor gaussian_blur(const Tensor& img, double sigma) {
  if (img.rank() != 3) {
    throw Error(ErrorKind::Dimension, "blur input must be {C, H, W}");
  }
  if (!(sigma > 0.0)) {
    throw Error(ErrorKind::Argument, "blur sigma must be positive");
  }
  const std::ptrdiff_t radius =
      static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    taps[i + radius] =
        std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  }
  const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);

  // Horizontal pass, then vertical.
  Tensor tmp(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0, norm = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::ptrdiff_t xx = static_cast<std::ptrdiff_t>(x) + k;
          if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
          acc += taps[k + radius] *
                 img.at(ch, y, static_cast<std::size_t>(xx));
          norm += taps[k + radius];
        }
        tmp.at(ch, y, x) = acc / norm;
      }
    }
  }
  Tensor out(img.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0, norm = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const std::ptrdiff_t yy = static_cast<std::ptrdiff_t>(y) + k;
          if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
          acc += taps[k + radius] *
                 tmp.at(ch, static_cast<std::size_t>(yy), x);
          norm += taps[k + radius];
        }
        out.at(ch, y, x) = acc / norm;
      }
    }
  }
  return out;
}

namespace detail {

inline Tensor degrade_stage(const Tensor& img, double blur_sigma,
                            double noise_sigma, SplitMix64& rng) {
  Tensor out = gaussian_blur(img, blur_sigma);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += noise_sigma * rng.next_gaussian();
  }
  // 2x down then back up: average pooling kills the high band, nearest
  // upsampling restores the grid.
  return upsample_nearest(avgpool2(out), 2);
}

}  // namespace detail

// Two-stage degradation: blur(1.0) + noise(0.05) + 2x down/up, then the
// same with milder parameters blur(0.5) + noise(0.02), finally clamped to
// [0, 1].
inline Tensor degrade(const Tensor& hq, std::uint64_t noise_seed) {
  SplitMix64 rng(noise_seed);
  Tensor out = detail::degrade_stage(hq, 1.0, 0.05, rng);
  out = detail::degrade_stage(out, 0.5, 0.02, rng);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::min(std::max(out[i], 0.0), 1.0);
  }
  return out;
}

// One procedural face-like image: a background gradient, a skin-tone face
// ellipse, two eye dots, and a mouth bar, all jittered by the seed.  Values
// stay in [0, 1] by construction of the blend weights.
inline Tensor make_face_image(std::uint64_t seed, std::size_t size = 32) {
  SplitMix64 rng(seed);
  const double cx = 0.5 + 0.1 * (rng.next_uniform() - 0.5);
  const double cy = 0.48 + 0.1 * (rng.next_uniform() - 0.5);
  const double rx = 0.30 + 0.08 * rng.next_uniform();
  const double ry = 0.36 + 0.08 * rng.next_uniform();
  const double eye_dx = 0.12 + 0.04 * rng.next_uniform();
  const double eye_y = cy - 0.08 - 0.04 * rng.next_uniform();
  const double eye_r = 0.035 + 0.015 * rng.next_uniform();
  const double mouth_y = cy + 0.16 + 0.04 * rng.next_uniform();
  const double mouth_w = 0.10 + 0.05 * rng.next_uniform();
  const double grad_angle = 2.0 * 3.14159265358979323846 * rng.next_uniform();
  const double face_rgb[3] = {0.85 + 0.1 * rng.next_uniform(),
                              0.62 + 0.1 * rng.next_uniform(),
                              0.50 + 0.1 * rng.next_uniform()};
  const double back_rgb[3] = {0.15 + 0.2 * rng.next_uniform(),
                              0.20 + 0.2 * rng.next_uniform(),
                              0.35 + 0.2 * rng.next_uniform()};

  const auto smooth = [](double d, double edge) {
    // 1 inside (d < 0), 0 outside, smooth ramp of width `edge`.
    const double t = std::min(std::max(0.5 - d / edge, 0.0), 1.0);
    return t * t * (3.0 - 2.0 * t);
  };

  Tensor img({3, size, size});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) /
                       static_cast<double>(size);
      const double v = (static_cast<double>(y) + 0.5) /
                       static_cast<double>(size);
      const double grad = 0.5 + 0.4 * ((u - 0.5) * std::cos(grad_angle) +
                                       (v - 0.5) * std::sin(grad_angle));

      const double du = (u - cx) / rx, dv = (v - cy) / ry;
      const double face = smooth(std::sqrt(du * du + dv * dv) - 1.0, 0.15);

      const double el = std::hypot(u - (cx - eye_dx), v - eye_y) - eye_r;
      const double er = std::hypot(u - (cx + eye_dx), v - eye_y) - eye_r;
      const double eyes = std::max(smooth(el, 0.06), smooth(er, 0.06));

      const double mouth =
          smooth(std::fabs(v - mouth_y) - 0.018, 0.05) *
          smooth(std::fabs(u - cx) - mouth_w, 0.05);

      for (std::size_t ch = 0; ch < 3; ++ch) {
        double val = grad * back_rgb[ch];
        val = val + face * (face_rgb[ch] - val);
        val = val + eyes * (0.08 - val);
        val = val + mouth * (0.30 - val);
        img.at(ch, y, x) = std::min(std::max(val, 0.0), 1.0);
      }
    }
  }
  return img;
}

struct ImagePair {
  Tensor hq;
  Tensor lq;
};

// Deterministic dataset: sample i draws its own seeds for content and
// degradation noise from the root seed.
inline std::vector<ImagePair> make_synthetic_dataset(std::size_t n,
                                                     std::uint64_t seed,
                                                     std::size_t size = 32) {
  if (n == 0) {
    throw Error(ErrorKind::Argument, "dataset size must be >= 1");
  }
  std::vector<ImagePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor hq = make_face_image(derive_seed(seed, "dataset-image", i), size);
    Tensor lq = degrade(hq, derive_seed(seed, "dataset-noise", i));
    out.push_back(ImagePair{std::move(hq), std::move(lq)});
  }
  return out;
}

}  // namespace quantface
