#pragma once

// Change-feature refinement. Per level: guided fusion of the bitemporal pair
// with its absolute difference, a dual-branch block that excites salient
// regions and re-weights non-salient ones over a k x k partition grid, and a
// size-preserving max-pool pyramid followed by slice-stacked channel
// attention with a learnable residual gate. Levels run strictly 5..1 with the
// initial change map injected before levels 2 and 1.

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cebsnet/config.hpp"
#include "cebsnet/encoder.hpp"
#include "cebsnet/layers.hpp"

namespace cebsnet {

// k x k region-importance scores built from dual-axis strip statistics.
template <typename T>
struct RegionScores {
  Tensor<T> ew;  // [n,1,1,k], sums to 1 along w
  Tensor<T> eh;  // [n,1,k,1], sums to 1 along h
  Tensor<T> e;   // [n,1,k,k] = (eh + ew) / 2; sums to k overall
  i64 k = 0;
};

// s_mn = 1-beta where e_mn attains the per-item grid maximum (all ties
// suppressed), 1 elsewhere. Constant w.r.t. the tape: the selection is
// piecewise constant, so its almost-everywhere derivative is zero.
template <typename T>
Tensor<T> suppression_matrix(const RegionScores<T>& scores, double beta) {
  check(beta >= 0.0 && beta <= 1.0,
        "suppression: beta out of [0,1]: " + std::to_string(beta));
  const Tensor<T> e = scores.e.detach();
  const Shape s = e.shape();
  std::vector<T> vals(e.values());
  const i64 grid = s.h * s.w;
  for (i64 n = 0; n < s.n; ++n) {
    T* p = vals.data() + n * grid;
    T mx = p[0];
    for (i64 i = 1; i < grid; ++i) mx = std::max(mx, p[i]);
    for (i64 i = 0; i < grid; ++i) {
      p[i] = (p[i] == mx) ? static_cast<T>(1.0 - beta) : T(1);
    }
  }
  return Tensor<T>::from_values(s, std::move(vals));
}

// Dual-branch excitation/suppression block for one level.
template <typename T>
struct ExciteSuppressBlock {
  int level = 0;
  i64 width = 0;
  bool align_corners = false;
  // Shallow levels (2, 1) modulate by the initial change map.
  Conv2dLayer<T> mhat_proj, feat_conv, fa_prime;
  ConvStack<T> exc_fuse;
  // Region scoring (linear 1x1 score heads, one per axis).
  Conv2dLayer<T> score_w, score_h;
  // Excitation path.
  ConvStack<T> ex_mod;
  Conv2dLayer<T> ex_out;
  // Suppression path.
  ConvStack<T> sup_in;
  Conv2dLayer<T> w_conv, fg_conv, bg_conv, sup_out;
  Tensor<T> gamma_logit;  // blend = sigmoid(gamma_logit)

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
            const ModelConfig& cfg, int lvl) {
    check(lvl >= 1 && lvl <= 4,
          "excite/suppress block only exists at levels 4..1, got level " +
              std::to_string(lvl));
    level = lvl;
    width = cfg.fpn_width;
    align_corners = cfg.align_corners;
    const i64 d = cfg.fpn_width;
    if (level <= 2) {
      mhat_proj.init(ps, rng, prefix + ".mhat_proj", ConvSpec::same(1, d, 1));
      feat_conv.init(ps, rng, prefix + ".feat", ConvSpec::same(d, d, 3));
      fa_prime.init(ps, rng, prefix + ".fa_prime", ConvSpec::same(d, d, 3));
      exc_fuse.init(ps, rng, prefix + ".exc_fuse", d, d, {1, 3});
    }
    // Strip softmax is shift-invariant, so the score convs are bias-free.
    score_w.init(ps, rng, prefix + ".score_w",
                 ConvSpec::linear1x1(d, 1, /*bias=*/false));
    score_h.init(ps, rng, prefix + ".score_h",
                 ConvSpec::linear1x1(d, 1, /*bias=*/false));
    ex_mod.init(ps, rng, prefix + ".ex_mod", d, d, {1, 3});
    ex_out.init(ps, rng, prefix + ".ex_out", ConvSpec::same(d, d, 3));
    sup_in.init(ps, rng, prefix + ".sup_in", d, d, {1, 3});
    w_conv.init(ps, rng, prefix + ".w_conv", ConvSpec::linear1x1(d, d));
    fg_conv.init(ps, rng, prefix + ".fg_conv", ConvSpec::linear1x1(d, d));
    bg_conv.init(ps, rng, prefix + ".bg_conv", ConvSpec::linear1x1(d, d));
    sup_out.init(ps, rng, prefix + ".sup_out", ConvSpec::same(d, d, 3));
    const double g = cfg.gamma_fesm_init;
    gamma_logit = scalar_param(ps, prefix + ".gamma",
                               static_cast<T>(std::log(g / (1.0 - g))));
  }

  // Input features for the branch: deeper levels resize the level-(i+1)
  // attention output; shallow levels gate it by the initial change map first.
  Tensor<T> excitation_input(const Tensor<T>& pasca_next,
                             const std::optional<Tensor<T>>& initial_map,
                             i64 target_h, i64 target_w, bool training) const {
    if (level >= 3) {
      check(!initial_map.has_value(),
            "excitation_input: initial map only feeds levels 2 and 1");
      return upsample_bilinear(pasca_next, target_h, target_w, align_corners);
    }
    check(initial_map.has_value(),
          "excitation_input: level " + std::to_string(level) +
              " requires the initial change map");
    const Shape ns = pasca_next.shape();
    auto mc = mhat_proj.forward(*initial_map, training);
    if (mc.shape().h != ns.h || mc.shape().w != ns.w) {
      mc = upsample_bilinear(mc, ns.h, ns.w, align_corners);
    }
    auto feat = feat_conv.forward(pasca_next, training);
    auto fap = fa_prime.forward(mul_elementwise(mc, feat), training);
    auto fused = exc_fuse.forward(add(mc, fap), training);
    return upsample_bilinear(fused, target_h, target_w, align_corners);
  }

  RegionScores<T> region_scores(const Tensor<T>& fa, i64 k,
                                bool training) const {
    const Shape s = fa.shape();
    check(k >= 1, "region_scores: k must be >= 1");
    check(k <= s.h && k <= s.w,
          "region_scores: k=" + std::to_string(k) +
              " larger than spatial extent of " + s.str());
    RegionScores<T> out;
    out.k = k;
    auto sw = score_w.forward(fa, training);
    auto sh = score_h.forward(fa, training);
    out.ew = softmax(strip_mean(sw, k, 3), 3);
    out.eh = softmax(strip_mean(sh, k, 2), 2);
    out.e = affine(add(out.eh, out.ew), static_cast<T>(0.5), T(0));
    return out;
  }

  Tensor<T> excite(const Tensor<T>& fa, const RegionScores<T>& scores,
                   bool training) const {
    const Shape s = fa.shape();
    auto eexp = region_expand(scores.e, s.h, s.w);
    auto mod = ex_mod.forward(mul_elementwise(eexp, fa), training);
    return ex_out.forward(add(fa, mod), training);
  }

  Tensor<T> suppress(const Tensor<T>& fa, const Tensor<T>& smatrix,
                     bool training) const {
    const Shape s = fa.shape();
    auto sexp = region_expand(smatrix, s.h, s.w);
    auto fs_in = sup_in.forward(mul_elementwise(fa, sexp), training);
    auto w = sigmoid(w_conv.forward(global_avg_pool(fs_in), training));
    auto fg = mul_elementwise(fs_in, w);
    auto bg = mul_elementwise(fs_in, affine(w, T(-1), T(1)));
    // Two-way softmax over {fg, bg} logits at each channel-spatial position.
    auto rfg = sigmoid(sub(fg_conv.forward(fg, training),
                           bg_conv.forward(bg, training)));
    auto rbg = affine(rfg, T(-1), T(1));
    auto mix = add(mul_elementwise(fg, rfg), mul_elementwise(bg, rbg));
    return sup_out.forward(mix, training);
  }

  Tensor<T> blend(const Tensor<T>& excited, const Tensor<T>& suppressed)
      const {
    check_same_shape(excited.shape(), suppressed.shape(), "fesm blend");
    auto g = sigmoid(gamma_logit);
    return add(mul_elementwise(excited, g),
               mul_elementwise(suppressed, affine(g, T(-1), T(1))));
  }

  Tensor<T> forward(const Tensor<T>& fa, i64 k, double beta,
                    bool training) const {
    auto scores = region_scores(fa, k, training);
    auto excited = excite(fa, scores, training);
    auto smat = suppression_matrix(scores, beta);
    auto suppressed = suppress(fa, smat, training);
    return blend(excited, suppressed);
  }
};

// Max-pool pyramid enhancement plus slice-stacked channel attention.
template <typename T>
struct PyramidAttentionBlock {
  ConvStack<T> in_stack;   // 1x1, 3x3, 1x1
  ConvStack<T> mspe;       // 1x1 (4D -> D), 3x3
  Conv2dLayer<T> res_proj; // 1x1 on the unpooled features
  Conv2dLayer<T> spe_proj; // 1x1 (2D -> D)
  Tensor<T> gamma;         // residual gate, init 0

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
            const ModelConfig& cfg) {
    const i64 d = cfg.fpn_width;
    in_stack.init(ps, rng, prefix + ".in", d, d, {1, 3, 1});
    mspe.init(ps, rng, prefix + ".mspe", 4 * d, d, {1, 3});
    res_proj.init(ps, rng, prefix + ".res", ConvSpec::same(d, d, 1));
    spe_proj.init(ps, rng, prefix + ".spe", ConvSpec::same(2 * d, d, 1));
    gamma = scalar_param(ps, prefix + ".gamma",
                         static_cast<T>(cfg.gamma_sca_init));
  }

  Tensor<T> pyramid_enhance(const Tensor<T>& fcgff, bool training) const {
    auto fin = in_stack.forward(fcgff, training);
    auto mp1 = maxpool2d(fin, 3, 1, 1);
    auto mp2 = maxpool2d(mp1, 3, 1, 1);
    auto mp3 = maxpool2d(mp2, 3, 1, 1);
    auto fused = mspe.forward(concat_channels<T>({fin, mp1, mp2, mp3}),
                              training);
    auto res = res_proj.forward(fcgff, training);
    return spe_proj.forward(concat_channels<T>({fused, res}), training);
  }

  // Row and column slices of the (square) feature map attend across channels;
  // the two reassembled maps are averaged and gated into a residual.
  Tensor<T> spatial_channel_attention(const Tensor<T>& fspe) const {
    const Shape s = fspe.shape();
    check(s.h == s.w, "spatial-channel attention: non-square feature " +
                          s.str());
    auto qkv = slice_stack(fspe);
    auto logits = matmul(qkv, qkv, false, true);
    auto attn = softmax(logits, 2);
    auto mixed = matmul(attn, qkv, true, false);
    auto map = slice_unstack(mixed, s.h, s.w);
    return add(fspe, mul_elementwise(map, gamma));
  }

  Tensor<T> forward(const Tensor<T>& fcgff, bool training) const {
    return spatial_channel_attention(pyramid_enhance(fcgff, training));
  }
};

// Guided fusion of the bitemporal pair with its absolute difference. Level 5
// has no guidance and returns the difference path alone.
template <typename T>
struct ChangeFusionBlock {
  int level = 0;
  ConvStack<T> ad_stack;    // 1x1, 3x3 on |fx - fy|
  ConvStack<T> con_stack;   // 1x1 (2D -> D), 3x3 on [fx, fy]
  ConvStack<T> guide_stack; // 1x1, 3x3 on (con * guidance)
  Conv2dLayer<T> fuse;      // final 1x1

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
            const ModelConfig& cfg, int lvl) {
    level = lvl;
    const i64 d = cfg.fpn_width;
    ad_stack.init(ps, rng, prefix + ".ad", d, d, {1, 3});
    if (level <= 4) {
      con_stack.init(ps, rng, prefix + ".con", 2 * d, d, {1, 3});
      guide_stack.init(ps, rng, prefix + ".guide", d, d, {1, 3});
      fuse.init(ps, rng, prefix + ".fuse", ConvSpec::same(d, d, 1));
    }
  }

  Tensor<T> forward(const Tensor<T>& fx, const Tensor<T>& fy,
                    const std::optional<Tensor<T>>& guidance,
                    bool training) const {
    check_same_shape(fx.shape(), fy.shape(), "change fusion");
    auto ad = ad_stack.forward(abs_elementwise(sub(fx, fy)), training);
    if (level == 5) return ad;
    check(guidance.has_value(), "change fusion: level " +
                                    std::to_string(level) +
                                    " requires guidance features");
    check_same_shape(guidance->shape(), fx.shape(), "change fusion guidance");
    auto con = con_stack.forward(concat_channels<T>({fx, fy}), training);
    auto guided = guide_stack.forward(mul_elementwise(con, *guidance),
                                      training);
    return fuse.forward(add(guided, ad), training);
  }
};

// One refinement level and the strictly-ordered pipeline over all five.
template <typename T>
struct RefineLevel {
  int level = 0;
  ChangeFusionBlock<T> fusion;
  ExciteSuppressBlock<T> fesm;  // levels 4..1 only
  PyramidAttentionBlock<T> pasca;

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg, int lvl) {
    level = lvl;
    const std::string prefix = "refine.l" + std::to_string(lvl);
    fusion.init(ps, rng, prefix + ".cgff", cfg, lvl);
    if (lvl <= 4) fesm.init(ps, rng, prefix + ".fesm", cfg, lvl);
    pasca.init(ps, rng, prefix + ".pasca", cfg);
  }
};

template <typename T>
struct RefineState {
  std::array<Tensor<T>, 5> cgff;   // slot i-1 holds level i
  std::array<Tensor<T>, 5> fesm;   // guidance maps (levels 4..1)
  std::array<Tensor<T>, 5> pasca;
  std::optional<Tensor<T>> initial_map;
  int next_level = 5;
};

template <typename T>
struct RefinePipeline {
  ModelConfig cfg;
  std::array<RefineLevel<T>, 5> levels;  // slot i-1 holds level i

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& c) {
    cfg = c;
    for (int lvl = 5; lvl >= 1; --lvl) {
      levels[static_cast<size_t>(lvl - 1)].init(ps, rng, c, lvl);
    }
  }

  void set_initial_map(RefineState<T>& st, const Tensor<T>& mhat) const {
    check(st.next_level == 2,
          "refine schedule: initial map must arrive after level 3, before "
          "level 2");
    st.initial_map = mhat;
  }

  // Runs one level of the 5 -> 1 schedule. The configured k is clamped to
  // the level's spatial extent so coarse desk-scale inputs stay valid.
  void refine_level(RefineState<T>& st, const FeaturePyramidPair<T>& pairs,
                    int level, bool training) const {
    check(level == st.next_level,
          "refine schedule violated: expected level " +
              std::to_string(st.next_level) + ", got " +
              std::to_string(level));
    if (level <= 2) {
      check(st.initial_map.has_value(),
            "refine schedule violated: level " + std::to_string(level) +
                " before the initial change map exists");
    }
    const auto& blk = levels[static_cast<size_t>(level - 1)];
    const Tensor<T>& fx = pairs.x_level(level);
    const Tensor<T>& fy = pairs.y_level(level);
    const Shape s = fx.shape();

    std::optional<Tensor<T>> guidance;
    if (level <= 4) {
      const Tensor<T>& pasca_next = st.pasca[static_cast<size_t>(level)];
      std::optional<Tensor<T>> mh;
      if (level <= 2) mh = st.initial_map;
      auto fa = blk.fesm.excitation_input(pasca_next, mh, s.h, s.w, training);
      const i64 k = std::min<i64>(cfg.k_for_level(level), std::min(s.h, s.w));
      guidance = blk.fesm.forward(fa, k, cfg.beta, training);
      st.fesm[static_cast<size_t>(level - 1)] = *guidance;
    }
    auto fused = blk.fusion.forward(fx, fy, guidance, training);
    st.cgff[static_cast<size_t>(level - 1)] = fused;
    st.pasca[static_cast<size_t>(level - 1)] = blk.pasca.forward(fused,
                                                                 training);
    st.next_level = level - 1;
  }
};

}  // namespace cebsnet
