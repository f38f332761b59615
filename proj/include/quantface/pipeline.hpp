#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "quantface/alloc.hpp"
#include "quantface/balance.hpp"
#include "quantface/config.hpp"
#include "quantface/data.hpp"
#include "quantface/error.hpp"
#include "quantface/metric.hpp"
#include "quantface/model.hpp"
#include "quantface/quant.hpp"
#include "quantface/report.hpp"
#include "quantface/rng.hpp"
#include "quantface/train.hpp"

namespace quantface {

constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Deterministic run context: everything derives from the config's root seed.
// ---------------------------------------------------------------------------
struct PipelineContext {
  RunConfig cfg;
  NoiseSchedule schedule;
  ToyUNet fp_model;
  std::vector<ImagePair> calib;
  std::vector<ImagePair> heldout;

  explicit PipelineContext(const RunConfig& c)
      : cfg(c),
        schedule(NoiseSchedule::linear(c.schedule_steps)),
        fp_model(derive_seed(c.seed, "model-weights"), c.image_size),
        calib(make_synthetic_dataset(c.calib_size,
                                     derive_seed(c.seed, "calib-data"),
                                     c.image_size)),
        heldout(make_synthetic_dataset(c.heldout_size,
                                       derive_seed(c.seed, "heldout-data"),
                                       c.image_size)) {}

  std::vector<Tensor> calib_lqs() const {
    std::vector<Tensor> out;
    out.reserve(calib.size());
    for (const ImagePair& p : calib) out.push_back(p.lq);
    return out;
  }
  std::vector<Tensor> heldout_lqs() const {
    std::vector<Tensor> out;
    out.reserve(heldout.size());
    for (const ImagePair& p : heldout) out.push_back(p.lq);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Model configuration helpers
// ---------------------------------------------------------------------------

// Per-site tensors seen by each activation quantizer (conv input after the
// balance transform; skip-add sum), for every input in the batch.
inline std::vector<std::vector<Tensor>> collect_site_activations(
    const ToyUNet& model, const std::vector<Tensor>& inputs) {
  std::vector<std::vector<Tensor>> per_site(model.site_count());
  for (const Tensor& x : inputs) {
    ModelCache cache;
    model.forward(x, &cache);
    for (std::size_t i = 0; i < model.site_count(); ++i) {
      per_site[i].push_back(std::move(cache.sites[i].t));
    }
  }
  return per_site;
}

struct ValueRange {
  double min_v = 0.0;
  double max_v = 0.0;
};

inline std::vector<ValueRange> activation_ranges(
    const std::vector<std::vector<Tensor>>& per_site) {
  std::vector<ValueRange> ranges(per_site.size());
  for (std::size_t i = 0; i < per_site.size(); ++i) {
    bool first = true;
    for (const Tensor& t : per_site[i]) {
      for (std::size_t k = 0; k < t.size(); ++k) {
        if (first) {
          ranges[i].min_v = ranges[i].max_v = t[k];
          first = false;
        } else {
          ranges[i].min_v = std::min(ranges[i].min_v, t[k]);
          ranges[i].max_v = std::max(ranges[i].max_v, t[k]);
        }
      }
    }
  }
  return ranges;
}

// Freezes per-tensor asymmetric activation quantizers.  Ranges are taken
// from the model's current state before any of the new quantizers activate,
// so calibration is order-independent.  bits[i] == 0 leaves site i at FP.
inline void calibrate_site_activations(ToyUNet& model,
                                       const std::vector<Tensor>& calib_in,
                                       const std::vector<int>& bits) {
  if (bits.size() != model.site_count()) {
    throw Error(ErrorKind::Argument, "bit list length mismatch");
  }
  const std::vector<ValueRange> ranges =
      activation_ranges(collect_site_activations(model, calib_in));
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    QuantSite& s = model.site(i);
    if (bits[i] <= 0) {
      s.act_bits = 0;
      s.act_calibrated = false;
      continue;
    }
    s.act_qparams = calibrate_from_range(ranges[i].min_v, ranges[i].max_v,
                                         bits[i], /*symmetric=*/false);
    s.act_bits = bits[i];
    s.act_calibrated = true;
  }
}

struct BalanceSiteDiag {
  std::string site;
  bool rotated = false;
  std::uint64_t hadamard_seed = 0;
  std::vector<double> scales;
  std::vector<double> ch_max_raw;
  std::vector<double> ch_max_scaled;
  std::vector<double> ch_max_rotated;
};

// Computes rotation-scaling balance from FP calibration activations, folds
// the scales (and a seeded rotation where the channel count is a power of
// two) into every conv-bearing site.  Returns per-channel diagnostics.
inline std::vector<BalanceSiteDiag> apply_balance(
    ToyUNet& model, const std::vector<Tensor>& calib_in, double alpha,
    std::uint64_t seed) {
  const std::vector<std::vector<Tensor>> acts =
      collect_site_activations(model, calib_in);
  std::vector<BalanceSiteDiag> diags;
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    QuantSite& s = model.site(i);
    if (!s.has_weights()) continue;
    BalanceSiteDiag diag;
    diag.site = s.name;
    const std::size_t c = s.layer.spec.in_channels;
    diag.ch_max_raw = channel_maxabs(acts[i], c);

    const std::vector<double> scales =
        compute_scales(acts[i], s.layer.kernel_t, alpha);
    s.layer.balance.alpha = alpha;
    apply_scaling(s.layer, scales);
    diag.scales = scales;
    diag.ch_max_scaled.resize(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      diag.ch_max_scaled[ch] = diag.ch_max_raw[ch] / scales[ch];
    }

    if (is_power_of_two(c)) {
      const std::uint64_t site_seed = derive_seed(seed, "hadamard", i);
      fold_rotation(s.layer, site_seed);
      diag.rotated = true;
      diag.hadamard_seed = site_seed;
      // Post-rotation channel maxima, measured on the transformed inputs.
      std::vector<Tensor> rotated;
      rotated.reserve(acts[i].size());
      for (const Tensor& t : acts[i]) {
        rotated.push_back(online_input_transform(t, s.layer));
      }
      diag.ch_max_rotated = channel_maxabs(rotated, c);
    }
    diags.push_back(std::move(diag));
  }
  return diags;
}

// Attaches QD-LoRA branches to every conv-bearing site, decomposing the
// current (post-balance) weights.  The rank is clamped to each weight
// matrix's smaller dimension (the 3-channel head cannot host rank 8).
inline void setup_branches(ToyUNet& model, std::size_t rank, int weight_bits,
                           std::uint64_t seed,
                           QuantMode mode = QuantMode::Real) {
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    QuantSite& s = model.site(i);
    if (!s.has_weights()) continue;
    const Tensor w_mat = kernel_to_matrix(s.layer.kernel_t, s.layer.spec);
    const std::size_t r =
        std::min(rank, std::min(w_mat.dim(0), w_mat.dim(1)));
    s.branches = init_svd_branch(w_mat, r, weight_bits, mode);
    init_lora_branch(s.branches, w_mat.dim(0), w_mat.dim(1),
                     derive_seed(seed, "lora-init", i));
    s.use_branches = true;
    s.weight_bits = weight_bits;
  }
}

// Plain per-output-channel weight quantization (the naive baseline path).
// bits <= 0 leaves the weights at full precision.
inline void apply_weight_quant(ToyUNet& model, int bits) {
  if (bits <= 0) return;
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    QuantSite& s = model.site(i);
    if (!s.has_weights()) continue;
    const Tensor w_mat = kernel_to_matrix(s.layer.kernel_t, s.layer.spec);
    s.weight_qparams = calibrate_per_output_channel(w_mat, bits);
    s.weight_bits = bits;
  }
}

// Uniform-minmax W/A baseline: no balancing, no branches, no training.
inline ToyUNet make_naive_model(const PipelineContext& ctx) {
  ToyUNet naive = ctx.fp_model;
  apply_weight_quant(naive, ctx.cfg.weight_bits);
  calibrate_site_activations(
      naive, ctx.calib_lqs(),
      std::vector<int>(naive.site_count(), ctx.cfg.act_bits));
  return naive;
}

// ---------------------------------------------------------------------------
// Metric plumbing
// ---------------------------------------------------------------------------

inline std::vector<Tensor> restored_outputs(const ToyUNet& model,
                                            const std::vector<Tensor>& lqs,
                                            const NoiseSchedule& schedule,
                                            std::size_t t) {
  std::vector<Tensor> out;
  out.reserve(lqs.size());
  for (const Tensor& lq : lqs) out.push_back(restore(model, lq, schedule, t));
  return out;
}

inline double mean_metric(MetricKind metric, const std::vector<Tensor>& a,
                          const std::vector<Tensor>& b) {
  if (a.size() != b.size() || a.empty()) {
    throw Error(ErrorKind::Argument, "metric batch size mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += eval_metric(metric, a[i], b[i]);
  }
  return acc / static_cast<double>(a.size());
}

// Metric delta with exactly one site's activation quantized at `bits`,
// everything else untouched.  The model is restored to its prior state.
inline double solo_act_delta(ToyUNet& model, std::size_t site_idx, int bits,
                             const ValueRange& range,
                             const std::vector<Tensor>& lqs,
                             const std::vector<Tensor>& baseline,
                             const NoiseSchedule& schedule, std::size_t t,
                             MetricKind metric) {
  QuantSite& s = model.site(site_idx);
  const int saved_bits = s.act_bits;
  const bool saved_cal = s.act_calibrated;
  const QuantParams saved_params = s.act_qparams;

  s.act_qparams =
      calibrate_from_range(range.min_v, range.max_v, bits, false);
  s.act_bits = bits;
  s.act_calibrated = true;
  const double delta =
      mean_metric(metric, restored_outputs(model, lqs, schedule, t),
                  baseline);
  s.act_bits = saved_bits;
  s.act_calibrated = saved_cal;
  s.act_qparams = saved_params;
  return delta;
}

// ---------------------------------------------------------------------------
// Stages.  Every stage is a deterministic function of the config, returning
// a JSON artifact; the CLI persists them and threads them between runs.
// ---------------------------------------------------------------------------

struct ProfileStageResult {
  SensitivityProfile profile;
  nlohmann::json artifact;
  std::string csv;
};

inline ProfileStageResult stage_profile(const PipelineContext& ctx) {
  ToyUNet model = ctx.fp_model;
  const std::vector<Tensor> lqs = ctx.calib_lqs();
  const std::vector<Tensor> baseline =
      restored_outputs(model, lqs, ctx.schedule, ctx.cfg.timestep);
  const std::vector<ValueRange> ranges =
      activation_ranges(collect_site_activations(model, lqs));

  ProfileStageResult out;
  out.profile = profile_sensitivity(
      model.site_count(), ctx.cfg.probe_bits,
      [&](std::size_t i, int bits) {
        return solo_act_delta(model, i, bits, ranges[i], lqs, baseline,
                              ctx.schedule, ctx.cfg.timestep,
                              ctx.cfg.metric);
      });

  const auto registry = model.layer_registry();
  nlohmann::json layers = nlohmann::json::array();
  std::ostringstream csv;
  csv << "layer,kind,act_elements,delta\n";
  for (std::size_t i = 0; i < registry.size(); ++i) {
    layers.push_back({{"name", registry[i].handle},
                      {"kind", site_kind_name(registry[i].kind)},
                      {"act_elements", registry[i].act_elements},
                      {"delta", out.profile.delta[i]}});
    csv << registry[i].handle << ',' << site_kind_name(registry[i].kind)
        << ',' << registry[i].act_elements << ','
        << std::setprecision(17) << out.profile.delta[i] << '\n';
  }
  out.artifact = {{"schema_version", kReportSchemaVersion},
                  {"stage", "profile"},
                  {"metric", metric_name(ctx.cfg.metric)},
                  {"probe_bits", ctx.cfg.probe_bits},
                  {"layers", std::move(layers)}};
  out.csv = csv.str();
  return out;
}

struct AllocateStageResult {
  PerceptualWeights weights;
  AllocProblem problem;
  AllocSolution solution;
  double epsilon = 0.0;
  std::vector<std::pair<std::size_t, std::size_t>> clamped;
  nlohmann::json artifact;
};

inline AllocateStageResult stage_allocate(const PipelineContext& ctx) {
  ToyUNet model = ctx.fp_model;
  const std::vector<Tensor> lqs = ctx.calib_lqs();
  const std::vector<Tensor> baseline =
      restored_outputs(model, lqs, ctx.schedule, ctx.cfg.timestep);
  const std::vector<std::vector<Tensor>> acts =
      collect_site_activations(model, lqs);
  const std::vector<ValueRange> ranges = activation_ranges(acts);

  AllocateStageResult out;

  // Desk epsilon: a fixed fraction of the FP output's mean squared
  // magnitude, so the threshold scales with the data.
  double mean_sq = 0.0;
  for (const Tensor& t : baseline) {
    mean_sq += frobenius_norm_sq(t) / static_cast<double>(t.size());
  }
  mean_sq /= static_cast<double>(baseline.size());
  out.epsilon = ctx.cfg.epsilon_frac * mean_sq;

  out.weights = assign_weights(
      model.site_count(), out.epsilon, ctx.cfg.b_max,
      [&](std::size_t i, int bits) {
        return solo_act_delta(model, i, bits, ranges[i], lqs, baseline,
                              ctx.schedule, ctx.cfg.timestep,
                              ctx.cfg.metric);
      });

  // Loss table over candidate bits: weighted matmul-space error with
  // weights fixed at the configured width.  Conv sites use the im2col
  // matrices (patches stacked over the calibration set); skip-add sites
  // carry no weights, so their loss is the weighted activation error.
  out.problem.candidate_bits = ctx.cfg.candidate_bits;
  const auto registry = model.layer_registry();
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    const QuantSite& s = model.site(i);
    out.problem.elements.push_back(s.act_elements);
    std::vector<double> row;
    if (s.has_weights()) {
      const Tensor w_mat = kernel_to_matrix(s.layer.kernel_t, s.layer.spec);
      const std::vector<QuantParams> wq =
          calibrate_per_output_channel(w_mat, ctx.cfg.weight_bits);
      // Stack every calibration sample's patch matrix.
      const std::size_t d = s.layer.spec.patch_depth();
      std::size_t rows = 0;
      std::vector<Tensor> mats;
      for (const Tensor& t : acts[i]) {
        mats.push_back(im2col(t, s.layer.spec));
        rows += mats.back().dim(0);
      }
      Tensor x({rows, d});
      std::size_t at = 0;
      for (const Tensor& m : mats) {
        std::copy(m.values().begin(), m.values().end(),
                  x.values().begin() + static_cast<std::ptrdiff_t>(at));
        at += m.size();
      }
      for (int b : ctx.cfg.candidate_bits) {
        const QuantParams xq = calibrate_from_range(
            ranges[i].min_v, ranges[i].max_v, b, false);
        row.push_back(layer_loss(out.weights.w[i], w_mat, x, wq, xq));
      }
    } else {
      for (int b : ctx.cfg.candidate_bits) {
        const QuantParams xq = calibrate_from_range(
            ranges[i].min_v, ranges[i].max_v, b, false);
        double err = 0.0;
        for (const Tensor& t : acts[i]) {
          err += frobenius_norm_sq(t - fake_quantize(t, xq));
        }
        row.push_back(out.weights.w[i] * out.weights.w[i] * err);
      }
    }
    out.problem.loss.push_back(std::move(row));
  }
  out.clamped = clamp_loss_monotonicity(out.problem);

  double total_elements = 0.0;
  for (std::size_t e : out.problem.elements) {
    total_elements += static_cast<double>(e);
  }
  out.problem.budget = ctx.cfg.target_avg_bits * total_elements;
  out.solution = solve_allocation(out.problem);

  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < registry.size(); ++i) {
    layers.push_back({{"name", registry[i].handle},
                      {"escalation_bits", out.weights.bits[i]},
                      {"weight", out.weights.w[i]},
                      {"act_elements", out.problem.elements[i]},
                      {"loss", out.problem.loss[i]},
                      {"assigned_bits", out.solution.bits[i]}});
  }
  nlohmann::json clamped = nlohmann::json::array();
  for (const auto& [layer, idx] : out.clamped) {
    clamped.push_back({{"layer", layer}, {"candidate_index", idx}});
  }
  out.artifact = {{"schema_version", kReportSchemaVersion},
                  {"stage", "allocate"},
                  {"metric", metric_name(ctx.cfg.metric)},
                  {"epsilon", out.epsilon},
                  {"b_max", ctx.cfg.b_max},
                  {"candidate_bits", ctx.cfg.candidate_bits},
                  {"budget", out.problem.budget},
                  {"evaluations", out.weights.evaluations},
                  {"monotonicity_clamps", std::move(clamped)},
                  {"layers", std::move(layers)},
                  {"objective", out.solution.objective},
                  {"total_cost", out.solution.total_cost},
                  {"average_bits", out.solution.average_bits}};
  return out;
}

struct BalanceStageResult {
  std::vector<BalanceSiteDiag> diags;
  nlohmann::json artifact;
};

// Folds balance into `model` (in place) and reports diagnostics.
inline BalanceStageResult stage_balance(const PipelineContext& ctx,
                                        ToyUNet& model) {
  BalanceStageResult out;
  out.diags = apply_balance(model, ctx.calib_lqs(), ctx.cfg.alpha,
                            derive_seed(ctx.cfg.seed, "balance"));
  nlohmann::json sites = nlohmann::json::array();
  for (const BalanceSiteDiag& d : out.diags) {
    sites.push_back({{"site", d.site},
                     {"rotated", d.rotated},
                     {"hadamard_seed", d.hadamard_seed},
                     {"scales", d.scales},
                     {"channel_max_raw", d.ch_max_raw},
                     {"channel_max_scaled", d.ch_max_scaled},
                     {"channel_max_rotated", d.ch_max_rotated}});
  }
  out.artifact = {{"schema_version", kReportSchemaVersion},
                  {"stage", "balance"},
                  {"alpha", ctx.cfg.alpha},
                  {"sites", std::move(sites)}};
  return out;
}

// Assembles the quantized model in stage order: fold balancing, attach
// QD-LoRA branches, freeze activation quantizers.  weight_bits == 0 is the
// identity configuration: no branches, weights untouched.
inline void assemble_quantized(const PipelineContext& ctx, ToyUNet& model,
                               const std::vector<int>& act_bits) {
  if (ctx.cfg.balance_enabled) {
    apply_balance(model, ctx.calib_lqs(), ctx.cfg.alpha,
                  derive_seed(ctx.cfg.seed, "balance"));
  }
  if (ctx.cfg.weight_bits > 0) {
    setup_branches(model, ctx.cfg.train.rank, ctx.cfg.weight_bits,
                   derive_seed(ctx.cfg.seed, "branches"));
  }
  calibrate_site_activations(model, ctx.calib_lqs(), act_bits);
}

struct TrainStageResult {
  TrainResult train;
  nlohmann::json artifact;
  std::string trace_csv;
};

// Distillation loss of `model` against the FP teacher, without touching any
// state; used for the identity configuration where nothing is trainable.
inline TrainResult frozen_train_result(const PipelineContext& ctx,
                                       const ToyUNet& model) {
  double mse_term = 0.0, perc_term = 0.0;
  for (const ImagePair& p : ctx.calib) {
    const Tensor t_img =
        restore(ctx.fp_model, p.lq, ctx.schedule, ctx.cfg.timestep);
    const Tensor img = restore(model, p.lq, ctx.schedule, ctx.cfg.timestep);
    mse_term += mse(img, t_img);
    perc_term += mse(avgpool2(img), avgpool2(t_img));
  }
  const double n = static_cast<double>(ctx.calib.size());
  mse_term /= n;
  perc_term /= n;
  const double total =
      ctx.cfg.train.lambda1 * perc_term + ctx.cfg.train.lambda2 * mse_term;
  TrainResult out;
  out.trace.push_back({0, total, mse_term, perc_term});
  out.initial_loss = total;
  out.final_loss = total;
  return out;
}

// Assembles the quantized model and distills it against the FP teacher.
inline TrainStageResult stage_train(const PipelineContext& ctx,
                                    ToyUNet& model,
                                    const std::vector<int>& act_bits) {
  assemble_quantized(ctx, model, act_bits);

  TrainStageResult out;
  if (ctx.cfg.weight_bits > 0) {
    out.train = distill_train(model, ctx.fp_model, ctx.calib, ctx.schedule,
                              ctx.cfg.timestep, ctx.cfg.train);
  } else {
    out.train = frozen_train_result(ctx, model);
  }

  std::ostringstream csv;
  csv << "iteration,total,mse_term,perc_term\n";
  nlohmann::json trace = nlohmann::json::array();
  for (const TraceRow& row : out.train.trace) {
    csv << row.iteration << ',' << std::setprecision(17) << row.total << ','
        << row.mse_term << ',' << row.perc_term << '\n';
    trace.push_back({{"iteration", row.iteration},
                     {"total", row.total},
                     {"mse_term", row.mse_term},
                     {"perc_term", row.perc_term}});
  }
  out.trace_csv = csv.str();
  out.artifact = {{"schema_version", kReportSchemaVersion},
                  {"stage", "train"},
                  {"iterations", ctx.cfg.train.iterations},
                  {"initial_loss", out.train.initial_loss},
                  {"final_loss", out.train.final_loss},
                  {"trace", std::move(trace)}};
  return out;
}

struct EvalStageResult {
  double pipeline_mse = 0.0;
  double naive_mse = 0.0;
  double pipeline_metric = 0.0;
  double naive_metric = 0.0;
  nlohmann::json artifact;
};

inline EvalStageResult stage_eval(const PipelineContext& ctx,
                                  const ToyUNet& quantized) {
  const std::vector<Tensor> lqs = ctx.heldout_lqs();
  const std::vector<Tensor> fp_out =
      restored_outputs(ctx.fp_model, lqs, ctx.schedule, ctx.cfg.timestep);
  const std::vector<Tensor> q_out =
      restored_outputs(quantized, lqs, ctx.schedule, ctx.cfg.timestep);
  const ToyUNet naive = make_naive_model(ctx);
  const std::vector<Tensor> n_out =
      restored_outputs(naive, lqs, ctx.schedule, ctx.cfg.timestep);

  EvalStageResult out;
  out.pipeline_mse = mean_metric(MetricKind::Mse, q_out, fp_out);
  out.naive_mse = mean_metric(MetricKind::Mse, n_out, fp_out);
  out.pipeline_metric = mean_metric(ctx.cfg.metric, q_out, fp_out);
  out.naive_metric = mean_metric(ctx.cfg.metric, n_out, fp_out);
  out.artifact = {{"schema_version", kReportSchemaVersion},
                  {"stage", "eval"},
                  {"metric", metric_name(ctx.cfg.metric)},
                  {"heldout_size", ctx.cfg.heldout_size},
                  {"pipeline_output_mse", out.pipeline_mse},
                  {"naive_minmax_output_mse", out.naive_mse},
                  {"pipeline_output_metric", out.pipeline_metric},
                  {"naive_minmax_output_metric", out.naive_metric}};
  return out;
}

struct PipelineResult {
  nlohmann::json report;
  std::string report_csv;
  nlohmann::json profile_artifact;
  nlohmann::json allocate_artifact;
  nlohmann::json balance_artifact;
  nlohmann::json train_artifact;
  nlohmann::json eval_artifact;
  std::string profile_csv;
  std::string trace_csv;
  ToyUNet quantized;

  explicit PipelineResult(ToyUNet model) : quantized(std::move(model)) {}
};

// Full composition: allocate precision, fold balancing, distill, evaluate,
// account.  Deterministic for a fixed config.
inline PipelineResult run_pipeline(const RunConfig& cfg) {
  const PipelineContext ctx(cfg);
  PipelineResult result(ctx.fp_model);

  const ProfileStageResult profile = stage_profile(ctx);
  result.profile_artifact = profile.artifact;
  result.profile_csv = profile.csv;

  std::vector<int> act_bits(ctx.fp_model.site_count(), cfg.act_bits);
  nlohmann::json alloc_json;
  if (cfg.mixed_activations) {
    AllocateStageResult alloc = stage_allocate(ctx);
    for (std::size_t i = 0; i < alloc.solution.bits.size(); ++i) {
      act_bits[i] = alloc.solution.bits[i];
    }
    result.allocate_artifact = std::move(alloc.artifact);
  }

  ToyUNet quantized = ctx.fp_model;
  if (cfg.balance_enabled) {
    // stage_train re-applies balance; run the diagnostics stage on a
    // scratch copy so the artifact matches what training folds.
    ToyUNet scratch = ctx.fp_model;
    result.balance_artifact = stage_balance(ctx, scratch).artifact;
  }
  TrainStageResult train = stage_train(ctx, quantized, act_bits);
  result.train_artifact = train.artifact;
  result.trace_csv = train.trace_csv;

  const EvalStageResult eval = stage_eval(ctx, quantized);
  result.eval_artifact = eval.artifact;

  const CompressionReport comp = model_footprint(quantized);
  const auto registry = quantized.layer_registry();
  nlohmann::json bits_json = nlohmann::json::array();
  for (std::size_t i = 0; i < registry.size(); ++i) {
    bits_json.push_back({{"name", registry[i].handle},
                         {"kind", site_kind_name(registry[i].kind)},
                         {"act_bits", act_bits[i]},
                         {"weight_bits",
                          registry[i].weight_shape.empty()
                              ? 0
                              : quantized.site(i).weight_bits},
                         {"act_elements", registry[i].act_elements}});
  }

  result.report = {
      {"schema_version", kReportSchemaVersion},
      {"config", run_config_to_json(cfg)},
      {"layers", std::move(bits_json)},
      {"allocation", result.allocate_artifact.is_null()
                         ? nlohmann::json(nullptr)
                         : result.allocate_artifact},
      {"balance", result.balance_artifact.is_null()
                      ? nlohmann::json(nullptr)
                      : result.balance_artifact},
      {"train",
       {{"initial_loss", train.train.initial_loss},
        {"final_loss", train.train.final_loss},
        {"iterations", cfg.train.iterations}}},
      {"eval", result.eval_artifact},
      {"compression",
       {{"fp_params", comp.fp_params},
        {"quantized_params", comp.q_params},
        {"params_ratio_percent", comp.params_ratio_percent},
        {"fp_ops", comp.fp_ops},
        {"quantized_ops", comp.q_ops},
        {"ops_ratio_percent", comp.ops_ratio_percent},
        {"rht_overhead_fraction", comp.rht_overhead_fraction}}}};

  std::ostringstream csv;
  csv << "key,value\n" << std::setprecision(17);
  csv << "initial_loss," << train.train.initial_loss << '\n';
  csv << "final_loss," << train.train.final_loss << '\n';
  csv << "pipeline_output_mse," << eval.pipeline_mse << '\n';
  csv << "naive_minmax_output_mse," << eval.naive_mse << '\n';
  csv << "params_ratio_percent," << comp.params_ratio_percent << '\n';
  csv << "ops_ratio_percent," << comp.ops_ratio_percent << '\n';
  csv << "rht_overhead_fraction," << comp.rht_overhead_fraction << '\n';
  result.report_csv = csv.str();
  return result;
}

// Structural check for report artifacts; the test suite validates every
// emitted report against this.
inline void validate_report_schema(const nlohmann::json& report) {
  const auto require = [&](const nlohmann::json& obj, const char* key,
                           const char* where) -> const nlohmann::json& {
    if (!obj.contains(key)) {
      throw Error(ErrorKind::Io, std::string("report missing \"") + key +
                                     "\" in " + where);
    }
    return obj.at(key);
  };
  if (require(report, "schema_version", "root").get<int>() !=
      kReportSchemaVersion) {
    throw Error(ErrorKind::Io, "unsupported report schema version");
  }
  require(report, "config", "root");
  const auto& layers = require(report, "layers", "root");
  if (!layers.is_array() || layers.empty()) {
    throw Error(ErrorKind::Io, "report layers must be a nonempty array");
  }
  for (const auto& l : layers) {
    require(l, "name", "layers");
    require(l, "kind", "layers");
    require(l, "act_bits", "layers");
    require(l, "weight_bits", "layers");
    require(l, "act_elements", "layers");
  }
  const auto& train = require(report, "train", "root");
  require(train, "initial_loss", "train");
  require(train, "final_loss", "train");
  const auto& eval = require(report, "eval", "root");
  require(eval, "pipeline_output_mse", "eval");
  require(eval, "naive_minmax_output_mse", "eval");
  const auto& comp = require(report, "compression", "root");
  require(comp, "params_ratio_percent", "compression");
  require(comp, "ops_ratio_percent", "compression");
  require(comp, "rht_overhead_fraction", "compression");
}

}  // namespace quantface
