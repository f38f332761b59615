#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "quantface/balance.hpp"
#include "quantface/error.hpp"
#include "quantface/model.hpp"

namespace quantface {

inline double round2(double v) { return std::round(v * 100.0) / 100.0; }

// Size reduction as a percentage, reported to two decimals:
// 100 * (1 - q_size / fp_size).
inline double compression_ratio(double fp_size, double q_size) {
  if (!(fp_size > 0.0) || !(q_size > 0.0) || q_size > fp_size) {
    throw Error(ErrorKind::Argument,
                "sizes must satisfy 0 < q_size <= fp_size");
  }
  return round2(100.0 * (1.0 - q_size / fp_size));
}

// Storage and compute accounting for one model configuration.
//   params: 32-bit-equivalent parameter count.
//     quantized weights count b_w/32 each, low-rank branch parameters count
//     1.0 (kept at high precision), Hadamard sign vectors 1/32 each.
//   ops: mult-add equivalents.
//     conv mult-adds scale by (b_w * b_a) / (32 * 32); online-RHT mult-adds
//     and low-rank branch mult-adds count at full factor.
struct CompressionReport {
  double fp_params = 0.0;
  double q_params = 0.0;
  double params_ratio_percent = 0.0;  // two decimals, 0 for the FP config
  double fp_ops = 0.0;
  double q_ops = 0.0;
  double ops_ratio_percent = 0.0;
  double rht_overhead_fraction = 0.0;
};

inline CompressionReport model_footprint(const ToyUNet& model) {
  CompressionReport rep;
  std::vector<ConvOpStats> op_stats;
  for (std::size_t i = 0; i < model.site_count(); ++i) {
    const QuantSite& s = model.site(i);
    if (!s.has_weights()) continue;
    const ConvSpec& spec = s.layer.spec;
    const double weights = static_cast<double>(s.layer.kernel.size());
    const double conv_mas = static_cast<double>(
        s.out_h * s.out_w * spec.out_channels * spec.patch_depth());

    rep.fp_params += weights;
    rep.fp_ops += conv_mas;

    const double bw = s.weight_bits > 0 ? s.weight_bits : 32.0;
    const double ba = s.act_bits > 0 ? s.act_bits : 32.0;
    rep.q_params += weights * (bw / 32.0);
    rep.q_ops += conv_mas * (bw * ba) / 1024.0;

    if (s.use_branches) {
      rep.q_params += static_cast<double>(
          s.branches.l1.size() + s.branches.l2.size() + s.branches.a.size() +
          s.branches.b.size());
      const double p = static_cast<double>(s.out_h * s.out_w);
      const double d = static_cast<double>(spec.patch_depth());
      const double f = static_cast<double>(spec.out_channels);
      const double r = static_cast<double>(s.branches.rank);
      // Two branches, each X*(d x r) then *(r x f).
      rep.q_ops += 2.0 * p * r * (d + f);
    }
    if (s.layer.balance.folded) {
      rep.q_params +=
          static_cast<double>(s.layer.balance.hadamard_size) / 32.0;
      rep.q_ops += static_cast<double>(
          rht_layer_ops(s.out_h, s.out_w, spec.in_channels));
    }
    ConvOpStats st;
    st.out_h = s.out_h;
    st.out_w = s.out_w;
    st.in_channels = spec.in_channels;
    st.mult_adds = static_cast<std::size_t>(conv_mas);
    st.rotated = s.layer.balance.folded;
    op_stats.push_back(st);
  }
  // Same formula as compression_ratio but without its domain check: side
  // branches can outweigh the bit savings on a small model, in which case
  // the reduction is reported as a negative percentage (expansion).
  rep.params_ratio_percent =
      round2(100.0 * (1.0 - rep.q_params / rep.fp_params));
  rep.ops_ratio_percent = round2(100.0 * (1.0 - rep.q_ops / rep.fp_ops));
  rep.rht_overhead_fraction = rht_overhead(op_stats);
  return rep;
}

}  // namespace quantface
