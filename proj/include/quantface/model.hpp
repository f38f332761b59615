#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "quantface/balance.hpp"
#include "quantface/error.hpp"
#include "quantface/lora.hpp"
#include "quantface/quant.hpp"
#include "quantface/rng.hpp"
#include "quantface/tensor.hpp"

namespace quantface {

// ---------------------------------------------------------------------------
// Diffusion schedule and one-step wrappers
// ---------------------------------------------------------------------------

// Strictly decreasing alpha-bar schedule over timesteps 1..T.
struct NoiseSchedule {
  std::vector<double> alpha_bar;

  static NoiseSchedule linear(std::size_t steps = 1000, double last = 0.01,
                              double first = 0.99) {
    if (steps == 0 || !(0.0 < last && last < first && first < 1.0)) {
      throw Error(ErrorKind::Argument, "invalid schedule range");
    }
    NoiseSchedule s;
    s.alpha_bar.resize(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      const double frac =
          steps == 1 ? 0.0
                     : static_cast<double>(t) / static_cast<double>(steps - 1);
      s.alpha_bar[t] = first + (last - first) * frac;
    }
    return s;
  }

  std::size_t steps() const { return alpha_bar.size(); }

  double at(std::size_t t) const {
    if (t < 1 || t > alpha_bar.size()) {
      throw Error(ErrorKind::Argument, "timestep out of range");
    }
    return alpha_bar[t - 1];
  }
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, eps seeded standard normal.
inline Tensor forward_diffusion(const Tensor& x0, std::size_t t,
                                const NoiseSchedule& schedule,
                                std::uint64_t noise_seed) {
  const double ab = schedule.at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  SplitMix64 rng(noise_seed);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    out[i] = a * x0[i] + b * rng.next_gaussian();
  }
  return out;
}

// x0_hat = (x_t - sqrt(1 - abar_t) eps_pred) / sqrt(abar_t).
inline Tensor one_step_estimate(const Tensor& x_t, const Tensor& eps_pred,
                                std::size_t t, const NoiseSchedule& schedule) {
  if (!x_t.same_shape(eps_pred)) {
    throw Error(ErrorKind::Dimension, "noise prediction shape mismatch");
  }
  const double ab = schedule.at(t);
  if (ab == 0.0) {
    throw Error(ErrorKind::Argument, "alpha-bar must be nonzero");
  }
  const double inv_a = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out[i] = (x_t[i] - b * eps_pred[i]) * inv_a;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quantization sites
// ---------------------------------------------------------------------------

enum class SiteKind { Conv, Downsample, Upsample, SkipAdd };

inline std::string site_kind_name(SiteKind kind) {
  switch (kind) {
    case SiteKind::Conv: return "conv";
    case SiteKind::Downsample: return "downsample";
    case SiteKind::Upsample: return "upsample";
    case SiteKind::SkipAdd: return "skip-add";
  }
  return "conv";
}

// One registry site: a conv-bearing block (conv / strided conv / upsample +
// conv) or a skip addition.  Carries all quantization hooks: activation
// quantizer, weight quantizer, channel balancing, and low-rank branches.
struct QuantSite {
  std::string name;
  SiteKind kind = SiteKind::Conv;

  // Conv-bearing sites.  `layer.kernel_t` is the effective kernel (after
  // any balance folding); `layer.kernel` keeps the original.
  BalancedConvLayer layer;
  bool has_silu = true;

  int weight_bits = 0;  // 0 = full precision
  std::vector<QuantParams> weight_qparams;

  bool use_branches = false;
  LowRankBranches branches;

  // All sites.
  int act_bits = 0;  // 0 = full precision
  bool act_calibrated = false;
  QuantParams act_qparams;
  QuantMode mode = QuantMode::Real;

  // Shape bookkeeping (fixed input resolution).
  std::size_t conv_in_h = 0, conv_in_w = 0;  // conv input dims (post-upsample)
  std::size_t out_h = 0, out_w = 0;
  std::size_t act_elements = 0;  // C*H*W of the quantized activation

  bool has_weights() const { return kind != SiteKind::SkipAdd; }
};

struct RegistryEntry {
  std::string handle;
  SiteKind kind;
  std::vector<std::size_t> weight_shape;  // empty for skip-add
  std::size_t act_elements = 0;
};

// Per-site forward records for reverse mode.
struct SiteCache {
  Tensor t;        // transformed conv input map (unquantized), conv sites
  Tensor x_mat;    // im2col of t
  Tensor xq_mat;   // im2col of the quantized map (branch path only)
  Tensor xa, xl1;  // branch intermediates
  Tensor mask;     // STE mask at map level (empty = all-pass)
  Tensor pre_act;  // conv output map before SiLU
  std::size_t up_in_h = 0, up_in_w = 0;  // pre-upsample dims (upsample sites)
};

struct ModelCache {
  std::vector<SiteCache> sites;
};

struct SiteGrads {
  Tensor dl1, dl2, da, db;
};

struct ModelGrads {
  std::vector<SiteGrads> sites;
};

// ---------------------------------------------------------------------------
// Toy one-step restoration network
// ---------------------------------------------------------------------------
//
// UNet-shaped: two stride-2 downsampling stages, two nearest-neighbour
// upsampling stages, additive skips at both resolutions, SiLU activations,
// 3x3 kernels, no biases.  Site order:
//   stem   conv 3->8          enc1  conv 8->8        down1 conv 8->16 /2
//   enc2   conv 16->16        down2 conv 16->32 /2   mid   conv 32->32
//   up1    x2 + conv 32->16   skip_a add enc2        dec1  conv 16->16
//   up2    x2 + conv 16->8    skip_b add enc1        dec2  conv 8->8
//   head   conv 8->3 (no activation)
class ToyUNet {
 public:
  explicit ToyUNet(std::uint64_t seed, std::size_t image_size = 32)
      : image_size_(image_size) {
    if (image_size < 8 || image_size % 4 != 0) {
      throw Error(ErrorKind::Argument,
                  "image size must be a multiple of 4, at least 8");
    }
    const std::size_t s = image_size, h = s / 2, q = s / 4;
    add_conv("stem", SiteKind::Conv, 3, 8, 1, s, s, true);
    add_conv("enc1", SiteKind::Conv, 8, 8, 1, s, s, true);
    add_conv("down1", SiteKind::Downsample, 8, 16, 2, s, s, true);
    add_conv("enc2", SiteKind::Conv, 16, 16, 1, h, h, true);
    add_conv("down2", SiteKind::Downsample, 16, 32, 2, h, h, true);
    add_conv("mid", SiteKind::Conv, 32, 32, 1, q, q, true);
    add_conv("up1", SiteKind::Upsample, 32, 16, 1, q, q, true);
    add_skip("skip_a", 16, h, h);
    add_conv("dec1", SiteKind::Conv, 16, 16, 1, h, h, true);
    add_conv("up2", SiteKind::Upsample, 16, 8, 1, h, h, true);
    add_skip("skip_b", 8, s, s);
    add_conv("dec2", SiteKind::Conv, 8, 8, 1, s, s, true);
    add_conv("head", SiteKind::Conv, 8, 3, 1, s, s, false);
    init_weights(seed);
  }

  std::size_t image_size() const { return image_size_; }
  std::size_t site_count() const { return sites_.size(); }
  QuantSite& site(std::size_t i) { return sites_.at(i); }
  const QuantSite& site(std::size_t i) const { return sites_.at(i); }

  std::size_t find_site(const std::string& name) const {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      if (sites_[i].name == name) return i;
    }
    throw Error(ErrorKind::Argument, "unknown site: " + name);
  }

  std::vector<RegistryEntry> layer_registry() const {
    std::vector<RegistryEntry> reg;
    reg.reserve(sites_.size());
    for (const QuantSite& s : sites_) {
      RegistryEntry e;
      e.handle = s.name;
      e.kind = s.kind;
      if (s.has_weights()) {
        e.weight_shape = s.layer.kernel.shape();
      }
      e.act_elements = s.act_elements;
      reg.push_back(std::move(e));
    }
    return reg;
  }

  // Predicts eps from a noisy input; honors every enabled hook.
  Tensor forward(const Tensor& x, ModelCache* cache = nullptr) const {
    if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != image_size_ ||
        x.dim(2) != image_size_) {
      throw Error(ErrorKind::Dimension, "model input must be {3, S, S}");
    }
    if (cache != nullptr) cache->sites.assign(sites_.size(), SiteCache{});
    const Tensor a_stem = site_forward(0, x, cache);
    const Tensor a_enc1 = site_forward(1, a_stem, cache);
    const Tensor a_down1 = site_forward(2, a_enc1, cache);
    const Tensor a_enc2 = site_forward(3, a_down1, cache);
    const Tensor a_down2 = site_forward(4, a_enc2, cache);
    const Tensor a_mid = site_forward(5, a_down2, cache);
    const Tensor a_up1 = site_forward(6, a_mid, cache);
    const Tensor a_skip_a = skip_forward(7, a_up1, a_enc2, cache);
    const Tensor a_dec1 = site_forward(8, a_skip_a, cache);
    const Tensor a_up2 = site_forward(9, a_dec1, cache);
    const Tensor a_skip_b = skip_forward(10, a_up2, a_enc1, cache);
    const Tensor a_dec2 = site_forward(11, a_skip_b, cache);
    return site_forward(12, a_dec2, cache);
  }

  // Hook-free reference forward using plain conv2d; used to check that the
  // hooked path is bitwise transparent at identity configuration.
  Tensor forward_reference(const Tensor& x) const {
    Tensor a = silu(conv2d(x, sites_[0].layer.kernel, sites_[0].layer.spec));
    const Tensor e1 =
        silu(conv2d(a, sites_[1].layer.kernel, sites_[1].layer.spec));
    a = silu(conv2d(e1, sites_[2].layer.kernel, sites_[2].layer.spec));
    const Tensor e2 =
        silu(conv2d(a, sites_[3].layer.kernel, sites_[3].layer.spec));
    a = silu(conv2d(e2, sites_[4].layer.kernel, sites_[4].layer.spec));
    a = silu(conv2d(a, sites_[5].layer.kernel, sites_[5].layer.spec));
    a = silu(conv2d(upsample_nearest(a, 2), sites_[6].layer.kernel,
                    sites_[6].layer.spec));
    a = a + e2;
    a = silu(conv2d(a, sites_[8].layer.kernel, sites_[8].layer.spec));
    a = silu(conv2d(upsample_nearest(a, 2), sites_[9].layer.kernel,
                    sites_[9].layer.spec));
    a = a + e1;
    a = silu(conv2d(a, sites_[11].layer.kernel, sites_[11].layer.spec));
    return conv2d(a, sites_[12].layer.kernel, sites_[12].layer.spec);
  }

  // Reverse mode from d(model output); fills per-site branch gradients.
  // Backbone weights are frozen, so only branch sites receive gradients.
  void backward(const Tensor& d_out, const ModelCache& cache,
                ModelGrads& grads) const {
    if (cache.sites.size() != sites_.size()) {
      throw Error(ErrorKind::State, "backward called without a forward cache");
    }
    if (grads.sites.empty()) init_grads(grads);
    Tensor d = site_backward(12, d_out, cache, grads);
    d = site_backward(11, d, cache, grads);
    auto [d_up2, d_enc1_skip] = skip_backward(10, d, cache);
    d = site_backward(9, d_up2, cache, grads);
    d = site_backward(8, d, cache, grads);
    auto [d_up1, d_enc2_skip] = skip_backward(7, d, cache);
    d = site_backward(6, d_up1, cache, grads);
    d = site_backward(5, d, cache, grads);
    // enc2's output feeds both down2 and skip_a; sum both path gradients.
    d = site_backward(4, d, cache, grads) + d_enc2_skip;
    d = site_backward(3, d, cache, grads);
    // Likewise enc1 feeds down1 and skip_b.
    d = site_backward(2, d, cache, grads) + d_enc1_skip;
    d = site_backward(1, d, cache, grads);
    site_backward(0, d, cache, grads);
  }

  void init_grads(ModelGrads& grads) const {
    grads.sites.assign(sites_.size(), SiteGrads{});
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      const QuantSite& s = sites_[i];
      if (!s.use_branches) continue;
      grads.sites[i].dl1 = Tensor(s.branches.l1.shape());
      grads.sites[i].dl2 = Tensor(s.branches.l2.shape());
      grads.sites[i].da = Tensor(s.branches.a.shape());
      grads.sites[i].db = Tensor(s.branches.b.shape());
    }
  }

  static double silu_scalar(double v) { return v / (1.0 + std::exp(-v)); }

  static Tensor silu(const Tensor& x) {
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = silu_scalar(x[i]);
    return out;
  }

  static double silu_grad_scalar(double v) {
    const double sig = 1.0 / (1.0 + std::exp(-v));
    return sig * (1.0 + v * (1.0 - sig));
  }

 private:
  void add_conv(const std::string& name, SiteKind kind, std::size_t c_in,
                std::size_t c_out, std::size_t stride, std::size_t in_h,
                std::size_t in_w, bool has_silu) {
    QuantSite s;
    s.name = name;
    s.kind = kind;
    s.has_silu = has_silu;
    ConvSpec spec;
    spec.in_channels = c_in;
    spec.out_channels = c_out;
    spec.kernel = 3;
    spec.stride = stride;
    spec.pad = 1;
    // For upsample sites the conv input is the 2x-upsampled map.
    s.conv_in_h = kind == SiteKind::Upsample ? in_h * 2 : in_h;
    s.conv_in_w = kind == SiteKind::Upsample ? in_w * 2 : in_w;
    s.out_h = spec.out_h(s.conv_in_h);
    s.out_w = spec.out_w(s.conv_in_w);
    s.act_elements = c_in * s.conv_in_h * s.conv_in_w;
    s.layer = make_balanced_layer(
        spec, Tensor({c_out, c_in, spec.kernel, spec.kernel}));
    sites_.push_back(std::move(s));
  }

  void add_skip(const std::string& name, std::size_t channels, std::size_t h,
                std::size_t w) {
    QuantSite s;
    s.name = name;
    s.kind = SiteKind::SkipAdd;
    s.has_silu = false;
    s.conv_in_h = h;
    s.conv_in_w = w;
    s.out_h = h;
    s.out_w = w;
    s.act_elements = channels * h * w;
    sites_.push_back(std::move(s));
  }

  void init_weights(std::uint64_t seed) {
    for (std::size_t i = 0; i < sites_.size(); ++i) {
      QuantSite& s = sites_[i];
      if (!s.has_weights()) continue;
      SplitMix64 rng(derive_seed(seed, "model-init", i));
      const double fan_in = static_cast<double>(
          s.layer.spec.in_channels * s.layer.spec.kernel *
          s.layer.spec.kernel);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (std::size_t j = 0; j < s.layer.kernel.size(); ++j) {
        s.layer.kernel[j] = stddev * rng.next_gaussian();
      }
      s.layer.kernel_t = s.layer.kernel;
    }
  }

  Tensor site_forward(std::size_t idx, const Tensor& input,
                      ModelCache* cache) const {
    const QuantSite& s = sites_[idx];
    SiteCache* sc = cache != nullptr ? &cache->sites[idx] : nullptr;

    Tensor up;
    const Tensor* conv_in = &input;
    if (s.kind == SiteKind::Upsample) {
      if (sc != nullptr) {
        sc->up_in_h = input.dim(1);
        sc->up_in_w = input.dim(2);
      }
      up = upsample_nearest(input, 2);
      conv_in = &up;
    }

    // Balance transform, then activation fake-quantization on the map.
    Tensor t = online_input_transform(*conv_in, s.layer);
    const bool act_on = s.act_bits > 0 && s.mode != QuantMode::Off;
    Tensor tq;
    if (act_on) {
      if (!s.act_calibrated) {
        throw Error(ErrorKind::State,
                    "activation quantizer not calibrated: " + s.name);
      }
      tq = fake_quantize(t, s.act_qparams, s.mode);
    }

    Tensor y_cols;
    if (s.use_branches) {
      const Tensor x_mat = im2col(t, s.layer.spec);
      const Tensor xq_mat = act_on ? im2col(tq, s.layer.spec) : x_mat;
      const Tensor xa = matmul(x_mat, s.branches.a);
      const Tensor xl1 = matmul(x_mat, s.branches.l1);
      y_cols = matmul(xa, s.branches.b) + matmul(xl1, s.branches.l2) +
               matmul(xq_mat, s.branches.r_q);
      if (sc != nullptr) {
        sc->x_mat = x_mat;
        sc->xq_mat = xq_mat;
        sc->xa = xa;
        sc->xl1 = xl1;
      }
    } else {
      const Tensor x_mat = im2col(act_on ? tq : t, s.layer.spec);
      Tensor w_mat = kernel_to_matrix(s.layer.kernel_t, s.layer.spec);
      if (s.weight_bits > 0 && s.mode != QuantMode::Off) {
        if (s.weight_qparams.size() != w_mat.dim(1)) {
          throw Error(ErrorKind::State,
                      "weight quantizer not calibrated: " + s.name);
        }
        w_mat = fake_quantize_per_output_channel(w_mat, s.weight_qparams,
                                                 s.mode);
      }
      y_cols = matmul(x_mat, w_mat);
      if (sc != nullptr) sc->x_mat = x_mat;
    }

    Tensor pre = columns_to_map(y_cols, s.layer.spec.out_channels, s.out_h,
                                s.out_w);
    if (sc != nullptr) {
      sc->t = t;
      if (act_on) sc->mask = ste_mask(t, s.act_qparams);
      sc->pre_act = pre;
    }
    if (!s.has_silu) return pre;
    return silu(pre);
  }

  Tensor skip_forward(std::size_t idx, const Tensor& a, const Tensor& b,
                      ModelCache* cache) const {
    const QuantSite& s = sites_[idx];
    Tensor sum = a + b;
    const bool act_on = s.act_bits > 0 && s.mode != QuantMode::Off;
    if (cache != nullptr) cache->sites[idx].t = sum;
    if (act_on) {
      if (!s.act_calibrated) {
        throw Error(ErrorKind::State,
                    "activation quantizer not calibrated: " + s.name);
      }
      if (cache != nullptr) {
        cache->sites[idx].mask = ste_mask(sum, s.act_qparams);
      }
      return fake_quantize(sum, s.act_qparams, s.mode);
    }
    return sum;
  }

  Tensor site_backward(std::size_t idx, const Tensor& d_out,
                       const ModelCache& cache, ModelGrads& grads) const {
    const QuantSite& s = sites_[idx];
    const SiteCache& sc = cache.sites[idx];

    // Through the nonlinearity.
    Tensor d_pre = d_out;
    if (s.has_silu) {
      for (std::size_t i = 0; i < d_pre.size(); ++i) {
        d_pre[i] *= silu_grad_scalar(sc.pre_act[i]);
      }
    }
    const Tensor dy = map_to_columns(d_pre);

    // Through the matmul stack down to the transformed input map.
    Tensor d_t;
    if (s.use_branches) {
      SiteGrads& g = grads.sites[idx];
      g.db = g.db + matmul(transpose(sc.xa), dy);
      g.dl2 = g.dl2 + matmul(transpose(sc.xl1), dy);
      const Tensor dy_bt = matmul(dy, transpose(s.branches.b));
      const Tensor dy_l2t = matmul(dy, transpose(s.branches.l2));
      g.da = g.da + matmul(transpose(sc.x_mat), dy_bt);
      g.dl1 = g.dl1 + matmul(transpose(sc.x_mat), dy_l2t);
      const Tensor dx_smooth = matmul(dy_bt, transpose(s.branches.a)) +
                               matmul(dy_l2t, transpose(s.branches.l1));
      const Tensor dx_quant = matmul(dy, transpose(s.branches.r_q));
      Tensor d_map_q = col2im(dx_quant, s.layer.spec, s.conv_in_h,
                              s.conv_in_w);
      if (sc.mask.size() != 0) {
        for (std::size_t i = 0; i < d_map_q.size(); ++i) {
          d_map_q[i] *= sc.mask[i];
        }
      }
      d_t = col2im(dx_smooth, s.layer.spec, s.conv_in_h, s.conv_in_w) +
            d_map_q;
    } else {
      Tensor w_mat = kernel_to_matrix(s.layer.kernel_t, s.layer.spec);
      if (s.weight_bits > 0 && s.mode != QuantMode::Off) {
        w_mat = fake_quantize_per_output_channel(w_mat, s.weight_qparams,
                                                 s.mode);
      }
      d_t = col2im(matmul(dy, transpose(w_mat)), s.layer.spec, s.conv_in_h,
                   s.conv_in_w);
      if (sc.mask.size() != 0) {
        for (std::size_t i = 0; i < d_t.size(); ++i) d_t[i] *= sc.mask[i];
      }
    }

    // Through the balance transform: forward was rotate(divide(x)), so the
    // adjoint is divide(rotate_transpose(g)).
    Tensor d_in = std::move(d_t);
    if (s.layer.balance.folded) {
      const std::size_t c = d_in.dim(0), plane = d_in.dim(1) * d_in.dim(2);
      std::vector<double> col(c);
      for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) col[ch] = d_in[ch * plane + i];
        rht_transpose(col.data(), c, s.layer.balance.signs);
        for (std::size_t ch = 0; ch < c; ++ch) d_in[ch * plane + i] = col[ch];
      }
    }
    if (s.layer.scaled) {
      const std::size_t c = d_in.dim(0), plane = d_in.dim(1) * d_in.dim(2);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / s.layer.balance.scales[ch];
        for (std::size_t i = 0; i < plane; ++i) {
          d_in[ch * plane + i] *= inv;
        }
      }
    }

    if (s.kind == SiteKind::Upsample) {
      return upsample_nearest_backward(d_in, 2, sc.up_in_h, sc.up_in_w);
    }
    return d_in;
  }

  std::pair<Tensor, Tensor> skip_backward(std::size_t idx, const Tensor& d_out,
                                          const ModelCache& cache) const {
    const SiteCache& sc = cache.sites[idx];
    Tensor d = d_out;
    if (sc.mask.size() != 0) {
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= sc.mask[i];
    }
    return {d, d};
  }

  std::size_t image_size_;
  std::vector<QuantSite> sites_;
};

// Treats the degraded image as x_t at a fixed timestep, runs the network as
// the noise predictor, and inverts Eq.-style one-step estimation.
inline Tensor restore(const ToyUNet& model, const Tensor& lq,
                      const NoiseSchedule& schedule, std::size_t t_fixed,
                      ModelCache* cache = nullptr) {
  return one_step_estimate(lq, model.forward(lq, cache), t_fixed, schedule);
}

}  // namespace quantface
