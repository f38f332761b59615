#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "quantface/data.hpp"
#include "quantface/error.hpp"
#include "quantface/metric.hpp"
#include "quantface/model.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t iterations = 200;
  double lambda1 = 0.5;  // weight of the downsampled (perceptual proxy) term
  double lambda2 = 0.5;  // weight of the pixel MSE term
  std::uint64_t seed = 0;
  double mu = 0.0;       // SVD-branch drift penalty coefficient
  std::size_t rank = 8;

  void validate() const {
    if (!(learning_rate > 0.0)) {
      throw Error(ErrorKind::Config, "learning rate must be positive");
    }
    if (iterations == 0) {
      throw Error(ErrorKind::Config, "iterations must be >= 1");
    }
    if (lambda1 < 0.0 || lambda2 < 0.0 || (lambda1 == 0.0 && lambda2 == 0.0)) {
      throw Error(ErrorKind::Config,
                  "loss weights must be >= 0 and not both zero");
    }
    if (mu < 0.0) {
      throw Error(ErrorKind::Config, "drift penalty must be >= 0");
    }
    if (rank == 0) {
      throw Error(ErrorKind::Config, "rank must be >= 1");
    }
  }
};

// Adam with bias correction; one state per trained tensor.
struct AdamState {
  Tensor m, v;
  std::size_t t = 0;
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state,
                      double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (state.t == 0) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    param[i] -= lr * (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + eps);
  }
}

struct TraceRow {
  std::size_t iteration = 0;
  double total = 0.0;
  double mse_term = 0.0;
  double perc_term = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;  // rows 0..iterations; row 0 is pre-training
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

namespace detail {

struct LossParts {
  double total = 0.0, mse_term = 0.0, perc_term = 0.0;
};

}  // namespace detail

// Distills the quantized model toward the FP model's restored outputs on the
// calibration set.  Full-batch deterministic training: loss
//   L = lambda1 * MSE(pool2(I_q), pool2(I_fp)) + lambda2 * MSE(I_q, I_fp)
// averaged over samples, plus the optional drift penalty.  Only low-rank
// branch parameters move.  The trace has iterations + 1 rows; row 0 is the
// pre-update loss.
inline TrainResult distill_train(ToyUNet& model_q, const ToyUNet& model_fp,
                                 const std::vector<ImagePair>& calib,
                                 const NoiseSchedule& schedule,
                                 std::size_t t_fixed, const TrainConfig& cfg) {
  cfg.validate();
  if (calib.empty()) {
    throw Error(ErrorKind::Argument, "calibration set is empty");
  }
  if (model_q.site_count() != model_fp.site_count()) {
    throw Error(ErrorKind::Argument, "model structures differ");
  }

  // FP teacher outputs are constants.
  std::vector<Tensor> teacher;
  teacher.reserve(calib.size());
  for (const ImagePair& pair : calib) {
    teacher.push_back(restore(model_fp, pair.lq, schedule, t_fixed));
  }

  std::vector<std::size_t> branch_sites;
  for (std::size_t i = 0; i < model_q.site_count(); ++i) {
    if (model_q.site(i).use_branches) branch_sites.push_back(i);
  }
  if (branch_sites.empty()) {
    throw Error(ErrorKind::State, "no trainable branches in the model");
  }

  // Adam state per branch tensor in a fixed order: (l1, l2, a, b) per site.
  std::vector<AdamState> adam(branch_sites.size() * 4);

  const double n = static_cast<double>(calib.size());
  const double ab = schedule.at(t_fixed);
  // d(restored image)/d(noise prediction) is a constant diagonal.
  const double d_img_d_eps = -std::sqrt(1.0 - ab) / std::sqrt(ab);

  const auto epoch = [&](ModelGrads* grads) -> detail::LossParts {
    detail::LossParts parts;
    for (std::size_t k = 0; k < calib.size(); ++k) {
      ModelCache cache;
      const Tensor img =
          restore(model_q, calib[k].lq, schedule, t_fixed,
                  grads != nullptr ? &cache : nullptr);
      const double m = mse(img, teacher[k]);
      const Tensor pooled = avgpool2(img);
      const Tensor pooled_fp = avgpool2(teacher[k]);
      double p = 0.0;
      for (std::size_t i = 0; i < pooled.size(); ++i) {
        const double d = pooled[i] - pooled_fp[i];
        p += d * d;
      }
      p /= static_cast<double>(pooled.size());
      parts.mse_term += m / n;
      parts.perc_term += p / n;

      if (grads != nullptr) {
        // d total / d img for this sample.
        Tensor d_pool(pooled.shape());
        for (std::size_t i = 0; i < pooled.size(); ++i) {
          d_pool[i] = cfg.lambda1 * 2.0 * (pooled[i] - pooled_fp[i]) /
                      (static_cast<double>(pooled.size()) * n);
        }
        Tensor d_img = avgpool2_backward(d_pool);
        for (std::size_t i = 0; i < img.size(); ++i) {
          d_img[i] += cfg.lambda2 * 2.0 * (img[i] - teacher[k][i]) /
                      (static_cast<double>(img.size()) * n);
          d_img[i] *= d_img_d_eps;  // chain through one-step estimation
        }
        model_q.backward(d_img, cache, *grads);
      }
    }
    parts.total = cfg.lambda1 * parts.perc_term + cfg.lambda2 * parts.mse_term;

    if (cfg.mu > 0.0) {
      for (std::size_t si : branch_sites) {
        const LowRankBranches& br = model_q.site(si).branches;
        const Tensor drift = matmul(br.l1, br.l2) - br.svd_init_prod;
        parts.total += cfg.mu * frobenius_norm_sq(drift);
        if (grads != nullptr) {
          SiteGrads& g = grads->sites[si];
          g.dl1 = g.dl1 + (2.0 * cfg.mu) * matmul(drift, transpose(br.l2));
          g.dl2 = g.dl2 + (2.0 * cfg.mu) * matmul(transpose(br.l1), drift);
        }
      }
    }
    return parts;
  };

  TrainResult result;
  result.trace.reserve(cfg.iterations + 1);
  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    ModelGrads grads;
    model_q.init_grads(grads);
    const detail::LossParts parts = epoch(&grads);
    if (!std::isfinite(parts.total)) {
      throw Error(ErrorKind::Training,
                  "loss diverged at iteration " + std::to_string(iter));
    }
    result.trace.push_back(
        TraceRow{iter, parts.total, parts.mse_term, parts.perc_term});

    for (std::size_t bi = 0; bi < branch_sites.size(); ++bi) {
      LowRankBranches& br = model_q.site(branch_sites[bi]).branches;
      const SiteGrads& g = grads.sites[branch_sites[bi]];
      adam_step(br.l1, g.dl1, adam[bi * 4 + 0], cfg.learning_rate);
      adam_step(br.l2, g.dl2, adam[bi * 4 + 1], cfg.learning_rate);
      adam_step(br.a, g.da, adam[bi * 4 + 2], cfg.learning_rate);
      adam_step(br.b, g.db, adam[bi * 4 + 3], cfg.learning_rate);
    }
  }
  const detail::LossParts final_parts = epoch(nullptr);
  if (!std::isfinite(final_parts.total)) {
    throw Error(ErrorKind::Training,
                "loss diverged at iteration " +
                    std::to_string(cfg.iterations));
  }
  result.trace.push_back(TraceRow{cfg.iterations, final_parts.total,
                                  final_parts.mse_term,
                                  final_parts.perc_term});
  result.initial_loss = result.trace.front().total;
  result.final_loss = result.trace.back().total;
  return result;
}

}  // namespace quantface
