#include "cebsnet/detector.hpp"
#include "cebsnet/gradcheck.hpp"
#include "cebsnet/objective.hpp"
#include "cebsnet/refine.hpp"

namespace cebsnet {

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.stage_widths = {4, 4, 4, 4, 4};
  cfg.fpn_width = 4;
  cfg.input_size = 32;
  cfg.k_per_level = {2, 2, 2, 2};
  return cfg;
}

// Values bounded away from zero (for kinked elementwise ops).
TensorD signed_tensor(Rng& rng, Shape s) {
  std::vector<double> vals(static_cast<size_t>(s.numel()));
  for (auto& v : vals) {
    const double mag = rand_uniform(rng, 0.1, 1.0);
    v = (rand_unit(rng) < 0.5) ? -mag : mag;
  }
  return TensorD::from_values(s, std::move(vals), true);
}

TensorD binary_tensor(Rng& rng, Shape s) {
  std::vector<double> vals(static_cast<size_t>(s.numel()));
  for (auto& v : vals) v = rand_unit(rng) < 0.4 ? 1.0 : 0.0;
  return TensorD::from_values(s, std::move(vals), false);
}

std::vector<TensorD> with_params(std::vector<TensorD> data,
                                 const ParamStore<double>& ps) {
  for (const auto& [name, t] : ps.params()) data.push_back(t);
  return data;
}

// Zero-initialized biases/shifts can park an activation exactly on the ReLU
// kink (bilinear upsampling reproduces the batch mean at the center pixel);
// jitter moves every parameter to a generic point before differencing.
void jitter_params(ParamStore<double>& ps, Rng& rng, double amp = 0.05) {
  for (const auto& [name, t] : ps.params()) {
    Tensor<double> h = t;
    for (auto& v : h.values_mut()) v += rand_uniform(rng, -amp, amp);
  }
}

using CaseFn =
    std::function<GradCheckReport(std::uint64_t, double, double)>;

GradCase make(const char* module, const char* name, double eps, CaseFn fn) {
  GradCase c;
  c.module = module;
  c.name = name;
  c.eps = eps;
  c.run = std::move(fn);
  return c;
}

std::vector<GradCase> build_cases() {
  std::vector<GradCase> cases;

  // ---- tensorops -----------------------------------------------------

  cases.push_back(make("tensorops", "conv2d_1x1", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {2, 3, 4, 4});
    auto w = random_tensor(rng, {2, 3, 1, 1});
    auto b = random_tensor(rng, {1, 2, 1, 1});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return conv2d(in[0], in[1], in[2], 1, 0);
        },
        {x, w, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "conv2d_3x3_pad1", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 5, 5});
    auto w = random_tensor(rng, {3, 2, 3, 3});
    auto b = random_tensor(rng, {1, 3, 1, 1});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return conv2d(in[0], in[1], in[2], 1, 1);
        },
        {x, w, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "conv2d_3x3_stride2", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 6, 6});
    auto w = random_tensor(rng, {2, 2, 3, 3});
    auto b = random_tensor(rng, {1, 2, 1, 1});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return conv2d(in[0], in[1], in[2], 2, 1);
        },
        {x, w, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "instance_norm", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    InstanceNorm<double> norm;
    norm.init(ps, "norm", 3);
    jitter_params(ps, rng);
    auto x = random_tensor(rng, {2, 3, 4, 4});
    return gradcheck(
        [norm](const std::vector<TensorD>& in) {
          return norm.forward(in[0], true);
        },
        with_params({x}, ps), eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "maxpool_2x2_s2", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_separated_tensor(rng, {1, 2, 6, 6});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return maxpool2d(in[0], 2, 2, 0);
        },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "maxpool_3x3_s1p1", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_separated_tensor(rng, {1, 2, 5, 5});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return maxpool2d(in[0], 3, 1, 1);
        },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "upsample_bilinear_up", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 3, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return upsample_bilinear(in[0], 5, 7, false);
        },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "upsample_bilinear_down", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 6, 6});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return upsample_bilinear(in[0], 3, 3, false);
        },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "add_broadcast", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto a = random_tensor(rng, {2, 3, 4, 4});
    auto b = random_tensor(rng, {1, 3, 1, 1});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return add(in[0], in[1]); },
        {a, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "mul_broadcast", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto a = random_tensor(rng, {2, 3, 4, 4});
    auto b = random_tensor(rng, {2, 1, 4, 4});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return mul_elementwise(in[0], in[1]);
        },
        {a, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "sub", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto a = random_tensor(rng, {1, 2, 3, 5});
    auto b = random_tensor(rng, {1, 2, 3, 5});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return sub(in[0], in[1]); },
        {a, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "abs", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = signed_tensor(rng, {1, 2, 4, 4});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return abs_elementwise(in[0]); },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "sigmoid", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 4, 4}, -3.0, 3.0);
    return gradcheck(
        [](const std::vector<TensorD>& in) { return sigmoid(in[0]); }, {x},
        eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "relu", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = signed_tensor(rng, {1, 2, 4, 4});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return relu(in[0]); }, {x}, eps,
        tol, seed);
  }));
  cases.push_back(make("tensorops", "affine", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 3, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return affine(in[0], 2.5, -0.75);
        },
        {x}, eps, tol, seed);
  }));
  for (int axis = 1; axis <= 3; ++axis) {
    cases.push_back(make("tensorops",
                         ("softmax_axis" + std::to_string(axis)).c_str(),
                         1e-4, [axis](auto seed, double eps, double tol) {
      Rng rng(seed);
      auto x = random_tensor(rng, {2, 3, 4, 5}, -2.0, 2.0);
      return gradcheck(
          [axis](const std::vector<TensorD>& in) {
            return softmax(in[0], axis);
          },
          {x}, eps, tol, seed);
    }));
  }
  cases.push_back(make("tensorops", "global_avg_pool", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {2, 3, 4, 5});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return global_avg_pool(in[0]); },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "concat_slice", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto a = random_tensor(rng, {1, 2, 3, 3});
    auto b = random_tensor(rng, {1, 3, 3, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          auto cat = concat_channels<double>({in[0], in[1]});
          return slice_channels(cat, 1, 3);
        },
        {a, b}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "channel_mix", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto a = random_tensor(rng, {1, 4, 3, 3});
    auto b = random_tensor(rng, {1, 4, 3, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return channel_mix(in[0], in[1], {1, 0, 1, 0});
        },
        {a, b}, eps, tol, seed);
  }));
  const std::pair<bool, bool> mm_flags[4] = {
      {false, false}, {false, true}, {true, false}, {true, true}};
  const char* mm_names[4] = {"matmul_nn", "matmul_nt", "matmul_tn",
                             "matmul_tt"};
  for (int v = 0; v < 4; ++v) {
    const bool ta = mm_flags[v].first, tb = mm_flags[v].second;
    cases.push_back(make("tensorops", mm_names[v], 1e-4,
                         [ta, tb](auto seed, double eps, double tol) {
      Rng rng(seed);
      auto a = random_tensor(rng, ta ? Shape{2, 2, 4, 3} : Shape{2, 2, 3, 4});
      auto b = random_tensor(rng, tb ? Shape{2, 2, 5, 4} : Shape{2, 2, 4, 5});
      return gradcheck(
          [ta, tb](const std::vector<TensorD>& in) {
            return matmul(in[0], in[1], ta, tb);
          },
          {a, b}, eps, tol, seed);
    }));
  }
  cases.push_back(make("tensorops", "strip_mean_w_uneven", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 4, 7});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return strip_mean(in[0], 3, 3); },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "strip_mean_h", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 2, 6, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return strip_mean(in[0], 2, 2); },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "region_expand_uneven", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto e = random_tensor(rng, {1, 2, 2, 3});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return region_expand(in[0], 7, 8);
        },
        {e}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "slice_stack", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 3, 4, 4});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return slice_stack(in[0]); },
        {x}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "slice_unstack", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto o = random_tensor(rng, {1, 8, 3, 4});
    return gradcheck(
        [](const std::vector<TensorD>& in) {
          return slice_unstack(in[0], 4, 4);
        },
        {o}, eps, tol, seed);
  }));
  cases.push_back(make("tensorops", "gradcheck_linear_identity", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto x = random_tensor(rng, {1, 1, 2, 2});
    return gradcheck(
        [](const std::vector<TensorD>& in) { return affine(in[0], 2.0, 0.0); },
        {x}, eps, tol, seed);
  }));

  // ---- refine ----------------------------------------------------------

  cases.push_back(make("refine", "cgff_level5", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ChangeFusionBlock<double> blk;
    blk.init(ps, rng, "cgff5", tiny_cfg(), 5);
    jitter_params(ps, rng);
    auto fx = random_tensor(rng, {1, 4, 5, 5});
    auto fy = random_tensor(rng, {1, 4, 5, 5});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.forward(in[0], in[1], std::nullopt, true);
        },
        with_params({fx, fy}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "cgff_guided", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ChangeFusionBlock<double> blk;
    blk.init(ps, rng, "cgff3", tiny_cfg(), 3);
    jitter_params(ps, rng);
    auto fx = random_tensor(rng, {1, 4, 5, 5});
    auto fy = random_tensor(rng, {1, 4, 5, 5});
    auto guide = random_tensor(rng, {1, 4, 5, 5});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.forward(in[0], in[1], in[2], true);
        },
        with_params({fx, fy, guide}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "region_scores", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 3);
    jitter_params(ps, rng);
    auto fa = random_tensor(rng, {1, 4, 5, 5});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.region_scores(in[0], 2, true).e;
        },
        with_params({fa}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "excitation_input_deep", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 3);
    jitter_params(ps, rng);
    auto pn = random_tensor(rng, {1, 4, 3, 3});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.excitation_input(in[0], std::nullopt, 5, 5, true);
        },
        with_params({pn}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "excitation_input_shallow", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 1);
    jitter_params(ps, rng);
    auto pn = random_tensor(rng, {1, 4, 3, 3});
    auto mh = random_tensor(rng, {1, 1, 4, 4});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.excitation_input(in[0], in[1], 6, 6, true);
        },
        with_params({pn, mh}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "excite", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 2);
    jitter_params(ps, rng);
    auto fa = random_tensor(rng, {1, 4, 6, 6});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          auto scores = blk.region_scores(in[0], 2, true);
          return blk.excite(in[0], scores, true);
        },
        with_params({fa}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "suppress", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 2);
    jitter_params(ps, rng);
    auto fa = random_tensor(rng, {1, 4, 6, 6});
    auto smat = TensorD::from_values({1, 1, 2, 2}, {1.0, 0.5, 1.0, 1.0});
    return gradcheck(
        [blk, smat](const std::vector<TensorD>& in) {
          return blk.suppress(in[0], smat, true);
        },
        with_params({fa}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "fesm_blend", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ExciteSuppressBlock<double> blk;
    blk.init(ps, rng, "fesm", tiny_cfg(), 4);
    jitter_params(ps, rng);
    auto fe = random_tensor(rng, {1, 4, 4, 4});
    auto fs = random_tensor(rng, {1, 4, 4, 4});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.blend(in[0], in[1]);
        },
        {fe, fs, blk.gamma_logit}, eps, tol, seed);
  }));
  cases.push_back(make("refine", "pyramid_enhance", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    PyramidAttentionBlock<double> blk;
    blk.init(ps, rng, "pasca", tiny_cfg());
    jitter_params(ps, rng);
    auto x = random_tensor(rng, {1, 4, 6, 6});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.pyramid_enhance(in[0], true);
        },
        with_params({x}, ps), eps, tol, seed);
  }));
  cases.push_back(make("refine", "spatial_channel_attention", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    PyramidAttentionBlock<double> blk;
    blk.init(ps, rng, "pasca", tiny_cfg());
    jitter_params(ps, rng);
    blk.gamma.values_mut()[0] = 0.7;
    auto x = random_tensor(rng, {1, 3, 4, 4});
    return gradcheck(
        [blk](const std::vector<TensorD>& in) {
          return blk.spatial_channel_attention(in[0]);
        },
        {x, blk.gamma}, eps, tol, seed);
  }));

  // ---- detector ----------------------------------------------------------

  cases.push_back(make("detector", "decoder_blocks", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    DecoderBlocks<double> dec;
    dec.init(ps, rng, tiny_cfg());
    jitter_params(ps, rng);
    auto p5 = random_tensor(rng, {1, 4, 2, 2});
    auto p4 = random_tensor(rng, {1, 4, 3, 3});
    return gradcheck(
        [dec](const std::vector<TensorD>& in) {
          auto db5 = dec.block5(in[0], true);
          return dec.block(4, db5, in[1], true);
        },
        with_params({p5, p4}, ps), eps, tol, seed);
  }));
  cases.push_back(make("detector", "decode_full", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    DecoderBlocks<double> dec;
    dec.init(ps, rng, tiny_cfg());
    jitter_params(ps, rng);
    std::array<Shape, 5> sizes{Shape{1, 4, 8, 8}, Shape{1, 4, 6, 6},
                               Shape{1, 4, 4, 4}, Shape{1, 4, 3, 3},
                               Shape{1, 4, 2, 2}};
    std::vector<TensorD> data;
    for (const auto& s : sizes) data.push_back(random_tensor(rng, s));
    return gradcheck(
        [dec](const std::vector<TensorD>& in) {
          std::array<TensorD, 5> pasca{in[0], in[1], in[2], in[3], in[4]};
          auto db = dec.decode(pasca, true);
          return concat_channels<double>(
              {db[0], upsample_bilinear(db[4], 8, 8)});
        },
        with_params(std::move(data), ps), eps, tol, seed);
  }));
  cases.push_back(make("detector", "mask_head", 1e-5, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    MaskHead<double> head;
    head.init(ps, rng, "head", 4);
    jitter_params(ps, rng);
    auto fdb = random_tensor(rng, {1, 4, 5, 5});
    return gradcheck(
        [head](const std::vector<TensorD>& in) {
          return head.forward(in[0], true);
        },
        with_params({fdb}, ps), eps, tol, seed);
  }));
  cases.push_back(make("detector", "fuse_initial", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ChangeDetector<double> det;
    det.init(ps, rng, tiny_cfg());
    jitter_params(ps, rng);
    auto m5 = random_tensor(rng, {1, 1, 2, 2});
    auto m4 = random_tensor(rng, {1, 1, 3, 3});
    auto m3 = random_tensor(rng, {1, 1, 5, 5});
    std::vector<TensorD> inputs{m5, m4, m3, det.fuse_deep.weight,
                                det.fuse_deep.bias};
    return gradcheck(
        [det](const std::vector<TensorD>& in) {
          return det.fuse_initial(in[0], in[1], in[2], true);
        },
        inputs, eps, tol, seed);
  }));
  cases.push_back(make("detector", "fuse_final", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    ParamStore<double> ps;
    ChangeDetector<double> det;
    det.init(ps, rng, tiny_cfg());
    jitter_params(ps, rng);
    auto mh = random_tensor(rng, {1, 1, 5, 5});
    auto m2 = random_tensor(rng, {1, 1, 5, 5});
    auto m1 = random_tensor(rng, {1, 1, 6, 6});
    std::vector<TensorD> inputs{mh, m2, m1, det.fuse_shallow.weight,
                                det.fuse_shallow.bias};
    return gradcheck(
        [det](const std::vector<TensorD>& in) {
          return det.fuse_final(in[0], in[1], in[2], true);
        },
        inputs, eps, tol, seed);
  }));

  // ---- objective ---------------------------------------------------------

  cases.push_back(make("objective", "bce_with_logits", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    auto logits = random_tensor(rng, {2, 1, 4, 4}, -3.0, 3.0);
    auto gt = binary_tensor(rng, {2, 1, 4, 4});
    return gradcheck(
        [gt](const std::vector<TensorD>& in) {
          return bce_with_logits(in[0], gt);
        },
        {logits}, eps, tol, seed);
  }));
  cases.push_back(make("objective", "total_loss", 1e-4, [](auto seed, double eps, double tol) {
    Rng rng(seed);
    std::vector<TensorD> maps;
    for (int i = 0; i < 7; ++i) {
      maps.push_back(random_tensor(rng, {1, 1, 6, 6}, -2.0, 2.0));
    }
    auto gt = binary_tensor(rng, {1, 1, 6, 6});
    return gradcheck(
        [gt](const std::vector<TensorD>& in) {
          MaskSet<double> masks;
          for (size_t i = 0; i < 7; ++i) masks.supervision[i] = in[i];
          return total_loss(masks, gt).total_tensor;
        },
        maps, eps, tol, seed);
  }));

  return cases;
}

}  // namespace

const std::vector<GradCase>& gradcheck_cases() {
  static const std::vector<GradCase> cases = build_cases();
  return cases;
}

}  // namespace cebsnet
