#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "quantface/error.hpp"

namespace quantface {

// Dense row-major tensor of doubles with an arbitrary rank.  Rank-2 tensors
// double as matrices with shape {rows, cols}; feature maps use {C, H, W}.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    data_.assign(element_count(shape_), 0.0);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != element_count(shape_)) {
      throw Error(ErrorKind::Dimension,
                  "tensor data size does not match shape");
    }
  }

  static Tensor full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw Error(ErrorKind::Dimension, "tensor axis out of range");
    }
    return shape_[axis];
  }

  // Rank-2 accessors.
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& at(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }

  // Rank-3 accessors ({C, H, W}).
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  std::size_t rows() const { return require_rank2().shape_[0]; }
  std::size_t cols() const { return require_rank2().shape_[1]; }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (element_count(shape) != data_.size()) {
      throw Error(ErrorKind::Dimension, "reshape changes element count");
    }
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(),
                           static_cast<std::size_t>(1),
                           std::multiplies<std::size_t>());
  }

 private:
  const Tensor& require_rank2() const {
    if (shape_.size() != 2) {
      throw Error(ErrorKind::Dimension, "matrix operation on non-matrix");
    }
    return *this;
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::Dimension, "elementwise add shape mismatch");
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::Dimension, "elementwise subtract shape mismatch");
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Tensor operator*(double s, const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

// C = A * B for rank-2 tensors, (m x k) * (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw Error(ErrorKind::Dimension, "matmul requires rank-2 tensors");
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw Error(ErrorKind::Dimension, "matmul inner dimension mismatch");
  }
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        c.at(i, j) += aip * b.at(p, j);
      }
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) {
    throw Error(ErrorKind::Dimension, "transpose requires a rank-2 tensor");
  }
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) {
      t.at(j, i) = a.at(i, j);
    }
  }
  return t;
}

inline double frobenius_norm_sq(const Tensor& a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
  return acc;
}

inline double frobenius_norm(const Tensor& a) {
  return std::sqrt(frobenius_norm_sq(a));
}

inline double max_abs(const Tensor& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

// 2-D convolution geometry.  Square kernels, symmetric zero padding.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;

  std::size_t out_h(std::size_t in_h) const {
    if (in_h + 2 * pad < kernel) {
      throw Error(ErrorKind::Dimension, "conv input smaller than kernel");
    }
    return (in_h + 2 * pad - kernel) / stride + 1;
  }
  std::size_t out_w(std::size_t in_w) const { return out_h(in_w); }

  // im2col patch depth: one column segment per input channel, kernel*kernel
  // taps each.
  std::size_t patch_depth() const { return in_channels * kernel * kernel; }
};

// Lowers an input feature map {C, H, W} to the patch matrix X of shape
// {P, D} where P = out_h*out_w spatial positions and D = C*k*k.  Column
// order groups taps by input channel: column c*k*k + ki*k + kj.
inline Tensor im2col(const Tensor& input, const ConvSpec& spec) {
  if (input.rank() != 3 || input.dim(0) != spec.in_channels) {
    throw Error(ErrorKind::Dimension, "im2col input shape mismatch");
  }
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  const std::size_t depth = spec.patch_depth();
  Tensor x({oh * ow, depth});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t row = oy * ow + ox;
      for (std::size_t c = 0; c < spec.in_channels; ++c) {
        for (std::size_t ki = 0; ki < spec.kernel; ++ki) {
          for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * spec.stride + ki) -
                static_cast<std::ptrdiff_t>(spec.pad);
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * spec.stride + kj) -
                static_cast<std::ptrdiff_t>(spec.pad);
            double v = 0.0;
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              v = input.at(c, static_cast<std::size_t>(iy),
                           static_cast<std::size_t>(ix));
            }
            x.at(row, (c * spec.kernel + ki) * spec.kernel + kj) = v;
          }
        }
      }
    }
  }
  return x;
}

// Adjoint of im2col: scatter-adds patch-matrix gradients back onto the input
// feature map.
inline Tensor col2im(const Tensor& grad_x, const ConvSpec& spec, std::size_t h,
                     std::size_t w) {
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  if (grad_x.rank() != 2 || grad_x.dim(0) != oh * ow ||
      grad_x.dim(1) != spec.patch_depth()) {
    throw Error(ErrorKind::Dimension, "col2im gradient shape mismatch");
  }
  Tensor out({spec.in_channels, h, w});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t row = oy * ow + ox;
      for (std::size_t c = 0; c < spec.in_channels; ++c) {
        for (std::size_t ki = 0; ki < spec.kernel; ++ki) {
          for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * spec.stride + ki) -
                static_cast<std::ptrdiff_t>(spec.pad);
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * spec.stride + kj) -
                static_cast<std::ptrdiff_t>(spec.pad);
            if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                ix < static_cast<std::ptrdiff_t>(w)) {
              out.at(c, static_cast<std::size_t>(iy),
                     static_cast<std::size_t>(ix)) +=
                  grad_x.at(row, (c * spec.kernel + ki) * spec.kernel + kj);
            }
          }
        }
      }
    }
  }
  return out;
}

// Flattens a conv kernel {F, C, k, k} to the weight matrix W of shape {D, F}
// so that conv output columns come from X(P x D) * W(D x F).
inline Tensor kernel_to_matrix(const Tensor& kernel, const ConvSpec& spec) {
  if (kernel.rank() != 4 || kernel.dim(0) != spec.out_channels ||
      kernel.dim(1) != spec.in_channels || kernel.dim(2) != spec.kernel ||
      kernel.dim(3) != spec.kernel) {
    throw Error(ErrorKind::Dimension, "kernel shape mismatch");
  }
  const std::size_t depth = spec.patch_depth();
  Tensor w({depth, spec.out_channels});
  for (std::size_t f = 0; f < spec.out_channels; ++f) {
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      for (std::size_t ki = 0; ki < spec.kernel; ++ki) {
        for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
          w.at((c * spec.kernel + ki) * spec.kernel + kj, f) =
              kernel[((f * spec.in_channels + c) * spec.kernel + ki) *
                         spec.kernel +
                     kj];
        }
      }
    }
  }
  return w;
}

inline Tensor matrix_to_kernel(const Tensor& w, const ConvSpec& spec) {
  if (w.rank() != 2 || w.dim(0) != spec.patch_depth() ||
      w.dim(1) != spec.out_channels) {
    throw Error(ErrorKind::Dimension, "weight matrix shape mismatch");
  }
  Tensor kernel(
      {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel});
  for (std::size_t f = 0; f < spec.out_channels; ++f) {
    for (std::size_t c = 0; c < spec.in_channels; ++c) {
      for (std::size_t ki = 0; ki < spec.kernel; ++ki) {
        for (std::size_t kj = 0; kj < spec.kernel; ++kj) {
          kernel[((f * spec.in_channels + c) * spec.kernel + ki) *
                     spec.kernel +
                 kj] = w.at((c * spec.kernel + ki) * spec.kernel + kj, f);
        }
      }
    }
  }
  return kernel;
}

// Output columns Y (P x F) back to a feature map {F, oh, ow}.
inline Tensor columns_to_map(const Tensor& y, std::size_t channels,
                             std::size_t oh, std::size_t ow) {
  if (y.rank() != 2 || y.dim(0) != oh * ow || y.dim(1) != channels) {
    throw Error(ErrorKind::Dimension, "column matrix shape mismatch");
  }
  Tensor out({channels, oh, ow});
  for (std::size_t p = 0; p < oh * ow; ++p) {
    for (std::size_t f = 0; f < channels; ++f) {
      out[f * oh * ow + p] = y.at(p, f);
    }
  }
  return out;
}

inline Tensor map_to_columns(const Tensor& fmap) {
  if (fmap.rank() != 3) {
    throw Error(ErrorKind::Dimension, "feature map must be rank 3");
  }
  const std::size_t c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
  Tensor y({h * w, c});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t f = 0; f < c; ++f) {
      y.at(p, f) = fmap[f * h * w + p];
    }
  }
  return y;
}

// Convolution via the im2col lowering: Y = im2col(input) * kernel_matrix,
// then columns reshaped back to {F, oh, ow}.  Adding a bias vector (one per
// output channel) is the caller's job.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel,
                     const ConvSpec& spec) {
  const Tensor x = im2col(input, spec);
  const Tensor w = kernel_to_matrix(kernel, spec);
  const Tensor y = matmul(x, w);
  return columns_to_map(y, spec.out_channels, spec.out_h(input.dim(1)),
                        spec.out_w(input.dim(2)));
}

// Nearest-neighbour upsampling by an integer factor.
inline Tensor upsample_nearest(const Tensor& input, std::size_t factor) {
  if (input.rank() != 3) {
    throw Error(ErrorKind::Dimension, "upsample input must be rank 3");
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  Tensor out({c, h * factor, w * factor});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h * factor; ++y) {
      for (std::size_t x = 0; x < w * factor; ++x) {
        out.at(ch, y, x) = input.at(ch, y / factor, x / factor);
      }
    }
  }
  return out;
}

// Adjoint of nearest-neighbour upsampling: sums gradients over each
// replicated block.
inline Tensor upsample_nearest_backward(const Tensor& grad, std::size_t factor,
                                        std::size_t h, std::size_t w) {
  const std::size_t c = grad.dim(0);
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h * factor; ++y) {
      for (std::size_t x = 0; x < w * factor; ++x) {
        out.at(ch, y / factor, x / factor) += grad.at(ch, y, x);
      }
    }
  }
  return out;
}

// 2x2 average pooling, stride 2.  Requires even spatial dims.
inline Tensor avgpool2(const Tensor& input) {
  if (input.rank() != 3 || input.dim(1) % 2 != 0 || input.dim(2) % 2 != 0) {
    throw Error(ErrorKind::Dimension, "avgpool2 needs even spatial dims");
  }
  const std::size_t c = input.dim(0), h = input.dim(1) / 2,
                    w = input.dim(2) / 2;
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.at(ch, y, x) = 0.25 * (input.at(ch, 2 * y, 2 * x) +
                                   input.at(ch, 2 * y, 2 * x + 1) +
                                   input.at(ch, 2 * y + 1, 2 * x) +
                                   input.at(ch, 2 * y + 1, 2 * x + 1));
      }
    }
  }
  return out;
}

inline Tensor avgpool2_backward(const Tensor& grad) {
  const std::size_t c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
  Tensor out({c, h * 2, w * 2});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double g = 0.25 * grad.at(ch, y, x);
        out.at(ch, 2 * y, 2 * x) = g;
        out.at(ch, 2 * y, 2 * x + 1) = g;
        out.at(ch, 2 * y + 1, 2 * x) = g;
        out.at(ch, 2 * y + 1, 2 * x + 1) = g;
      }
    }
  }
  return out;
}

}  // namespace quantface
