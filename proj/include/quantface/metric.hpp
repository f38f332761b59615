#pragma once

#include <string>

#include "quantface/error.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// Mean squared error over all elements.
inline double mse(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorKind::Dimension, "MSE shape mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// MSE after 2x average pooling: a crude pixel-domain perceptual proxy that
// emphasizes low-frequency structure over per-pixel noise.
inline double downsampled_mse(const Tensor& a, const Tensor& b) {
  return mse(avgpool2(a), avgpool2(b));
}

enum class MetricKind { Mse, DownsampledMse };

inline MetricKind parse_metric(const std::string& name) {
  if (name == "mse") return MetricKind::Mse;
  if (name == "downsampled-mse") return MetricKind::DownsampledMse;
  throw Error(ErrorKind::Config, "unknown metric: " + name);
}

inline std::string metric_name(MetricKind kind) {
  return kind == MetricKind::Mse ? "mse" : "downsampled-mse";
}

inline double eval_metric(MetricKind kind, const Tensor& a, const Tensor& b) {
  return kind == MetricKind::Mse ? mse(a, b) : downsampled_mse(a, b);
}

}  // namespace quantface
