#include <doctest.h>

#include <cmath>

#include "cebsnet/gradcheck.hpp"
#include "cebsnet/model.hpp"
#include "cebsnet/refine.hpp"

using namespace cebsnet;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.stage_widths = {4, 4, 8, 8, 8};
  cfg.fpn_width = 8;
  cfg.input_size = 32;
  cfg.k_per_level = {2, 2, 2, 2};
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("refine");

TEST_CASE("region scores match the hand oracle on a 2x2 grid") {
  // Identity 1x1 score convs on a single-channel 2x2 input [[1,3],[2,4]]:
  // strip means are {1.5, 3.5} (width) and {2, 3} (height).
  ModelConfig cfg = small_cfg();
  cfg.fpn_width = 1;
  ParamStore<double> ps;
  Rng rng(1);
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", cfg, 3);
  blk.score_w.weight.values_mut()[0] = 1.0;
  blk.score_h.weight.values_mut()[0] = 1.0;

  auto fa = TensorD::from_values({1, 1, 2, 2}, {1, 3, 2, 4});
  NoGradGuard ng;
  auto scores = blk.region_scores(fa, 2, false);

  const double ew1 = 1.0 / (1.0 + std::exp(-2.0));  // softmax([1.5,3.5])[1]
  CHECK(scores.ew.values()[0] == doctest::Approx(1.0 - ew1).epsilon(1e-6));
  CHECK(scores.ew.values()[1] == doctest::Approx(ew1).epsilon(1e-6));
  const double eh1 = 1.0 / (1.0 + std::exp(-1.0));  // softmax([2,3])[1]
  CHECK(scores.eh.values()[0] == doctest::Approx(1.0 - eh1).epsilon(1e-6));
  CHECK(scores.eh.values()[1] == doctest::Approx(eh1).epsilon(1e-6));

  const auto& e = scores.e.values();
  CHECK(e[0] == doctest::Approx(0.194072).epsilon(1e-4));
  CHECK(e[1] == doctest::Approx(0.574869).epsilon(1e-4));
  CHECK(e[2] == doctest::Approx(0.425131).epsilon(1e-4));
  CHECK(e[3] == doctest::Approx(0.805928).epsilon(1e-4));

  // Sum over the grid equals k.
  double sum = 0;
  for (double v : e) sum += v;
  CHECK(sum == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("constant input gives uniform region scores") {
  ParamStore<double> ps;
  Rng rng(2);
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", small_cfg(), 2);
  auto fa = TensorD::filled({1, 8, 6, 6}, 0.4);
  NoGradGuard ng;
  auto scores = blk.region_scores(fa, 3, false);
  for (double v : scores.ew.values()) CHECK(v == doctest::Approx(1.0 / 3));
  for (double v : scores.eh.values()) CHECK(v == doctest::Approx(1.0 / 3));
  for (double v : scores.e.values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("region scores reject k larger than the spatial extent") {
  ParamStore<double> ps;
  Rng rng(3);
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", small_cfg(), 2);
  auto fa = TensorD::filled({1, 8, 3, 3}, 0.1);
  CHECK_THROWS_WITH_AS(blk.region_scores(fa, 5, false),
                       doctest::Contains("larger than"), ContractError);
}

TEST_CASE("suppression matrix marks maxima and honors beta") {
  RegionScores<double> scores;
  scores.k = 2;
  scores.e =
      TensorD::from_values({1, 1, 2, 2}, {0.194, 0.575, 0.425, 0.806});
  auto s = suppression_matrix(scores, 0.3);
  CHECK(s.values() == std::vector<double>{1.0, 1.0, 1.0, 0.7});

  auto zero = suppression_matrix(scores, 0.0);
  CHECK(zero.values() == std::vector<double>{1.0, 1.0, 1.0, 1.0});

  scores.e = TensorD::filled({1, 1, 2, 2}, 0.5);
  auto ties = suppression_matrix(scores, 0.4);
  for (double v : ties.values()) CHECK(v == doctest::Approx(0.6));
}

TEST_CASE("suppression is per batch item") {
  RegionScores<double> scores;
  scores.k = 2;
  scores.e = TensorD::from_values(
      {2, 1, 2, 2}, {0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.9});
  auto s = suppression_matrix(scores, 0.5);
  CHECK(s.values() ==
        std::vector<double>{0.5, 1, 1, 1, 1, 1, 1, 0.5});
}

TEST_CASE("two-way recalibration weights sum to one pointwise") {
  Rng rng(4);
  ParamStore<double> ps;
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", small_cfg(), 2);
  auto fa = random_tensor(rng, {2, 8, 6, 6});
  auto smat = TensorD::from_values({1, 1, 2, 2}, {1, 1, 0.5, 1});
  // The invariant is structural: rebuild the weights the way suppress does.
  NoGradGuard ng;
  auto sexp = region_expand(smat, 6, 6);
  auto fs_in = blk.sup_in.forward(mul_elementwise(fa, sexp), false);
  auto w = sigmoid(blk.w_conv.forward(global_avg_pool(fs_in), false));
  auto fg = mul_elementwise(fs_in, w);
  auto bg = mul_elementwise(fs_in, affine(w, -1.0, 1.0));
  auto rfg = sigmoid(sub(blk.fg_conv.forward(fg, false),
                         blk.bg_conv.forward(bg, false)));
  auto rbg = affine(rfg, -1.0, 1.0);
  for (size_t i = 0; i < rfg.values().size(); ++i) {
    CHECK(rfg.values()[i] + rbg.values()[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
  // And the block runs end to end.
  auto out = blk.suppress(fa, smat, false);
  CHECK(out.shape() == fa.shape());
}

TEST_CASE("fesm blend interpolates between branches") {
  Rng rng(5);
  ParamStore<double> ps;
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", small_cfg(), 4);
  auto fe = random_tensor(rng, {1, 8, 4, 4});
  auto fs = random_tensor(rng, {1, 8, 4, 4});
  NoGradGuard ng;

  // Initialized at 0.5: the exact average.
  auto mid = blk.blend(fe, fs);
  for (size_t i = 0; i < mid.values().size(); ++i) {
    CHECK(mid.values()[i] ==
          doctest::Approx(0.5 * (fe.values()[i] + fs.values()[i])));
  }
  // Saturate the gate both ways.
  blk.gamma_logit.values_mut()[0] = 40.0;
  auto hi = blk.blend(fe, fs);
  for (size_t i = 0; i < hi.values().size(); ++i) {
    CHECK(hi.values()[i] == doctest::Approx(fe.values()[i]).epsilon(1e-9));
  }
  blk.gamma_logit.values_mut()[0] = -40.0;
  auto lo = blk.blend(fe, fs);
  for (size_t i = 0; i < lo.values().size(); ++i) {
    CHECK(lo.values()[i] == doctest::Approx(fs.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("guided fusion feeds a zero difference path for equal inputs") {
  Rng rng(6);
  auto fx = random_tensor(rng, {1, 8, 4, 4});
  auto d = abs_elementwise(sub(fx, fx));
  for (double v : d.values()) CHECK(v == 0.0);
}

TEST_CASE("level 5 fusion ignores guidance and has no fusion params") {
  Rng rng(7);
  ParamStore<double> ps;
  ChangeFusionBlock<double> blk;
  blk.init(ps, rng, "cgff5", small_cfg(), 5);
  for (const auto& [name, t] : ps.params()) {
    CHECK(name.find(".con.") == std::string::npos);
    CHECK(name.find(".guide.") == std::string::npos);
    CHECK(name.find(".fuse.") == std::string::npos);
  }
  auto fx = random_tensor(rng, {1, 8, 3, 3});
  auto fy = random_tensor(rng, {1, 8, 3, 3});
  NoGradGuard ng;
  auto out = blk.forward(fx, fy, std::nullopt, false);
  CHECK(out.shape() == fx.shape());
}

TEST_CASE("guided fusion requires guidance below level 5") {
  Rng rng(8);
  ParamStore<double> ps;
  ChangeFusionBlock<double> blk;
  blk.init(ps, rng, "cgff3", small_cfg(), 3);
  auto fx = random_tensor(rng, {1, 8, 3, 3});
  auto fy = random_tensor(rng, {1, 8, 3, 3});
  CHECK_THROWS_WITH_AS(blk.forward(fx, fy, std::nullopt, false),
                       doctest::Contains("guidance"), ContractError);
}

TEST_CASE("chained size-preserving maxpools dilate an impulse to 7x7") {
  std::vector<double> vals(11 * 11, 0.0);
  vals[5 * 11 + 5] = 1.0;
  auto x = TensorD::from_values({1, 1, 11, 11}, vals);
  auto p1 = maxpool2d(x, 3, 1, 1);
  auto p2 = maxpool2d(p1, 3, 1, 1);
  auto p3 = maxpool2d(p2, 3, 1, 1);
  i64 lit = 0;
  for (i64 y = 0; y < 11; ++y) {
    for (i64 xx = 0; xx < 11; ++xx) {
      const double v = p3.values()[static_cast<size_t>(y * 11 + xx)];
      const bool inside =
          std::abs(y - 5) <= 3 && std::abs(xx - 5) <= 3;
      CHECK(v == (inside ? 1.0 : 0.0));
      lit += v == 1.0;
    }
  }
  CHECK(lit == 49);
}

TEST_CASE("pyramid enhancement preserves shape, even at 1x1") {
  Rng rng(9);
  ParamStore<double> ps;
  PyramidAttentionBlock<double> blk;
  blk.init(ps, rng, "pasca", small_cfg());
  for (i64 sz : {1, 2, 6}) {
    auto x = random_tensor(rng, {1, 8, sz, sz});
    NoGradGuard ng;
    auto out = blk.pyramid_enhance(x, false);
    CHECK(out.shape() == x.shape());
  }
}

TEST_CASE("attention with equal keys mixes channels uniformly") {
  // All-equal slices: every attention column is uniform 1/C and each output
  // slice row equals the channel mean of V.
  const i64 C = 4, S = 3;
  // Identical channels: Q_m K_n^T is constant across m.
  std::vector<double> vals(static_cast<size_t>(C * S * S), 0.7);
  auto x = TensorD::from_values({1, C, S, S}, vals);
  NoGradGuard ng;
  auto qkv = slice_stack(x);
  auto attn = softmax(matmul(qkv, qkv, false, true), 2);
  for (double v : attn.values()) CHECK(v == doctest::Approx(0.25));
  auto mixed = matmul(attn, qkv, true, false);
  for (double v : mixed.values()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("residual gate at zero returns the input exactly") {
  Rng rng(10);
  ParamStore<double> ps;
  PyramidAttentionBlock<double> blk;
  blk.init(ps, rng, "pasca", small_cfg());
  auto x = random_tensor(rng, {2, 8, 4, 4});
  NoGradGuard ng;
  auto out = blk.spatial_channel_attention(x);
  CHECK(out.values() == x.values());
}

TEST_CASE("attention rejects non-square features") {
  Rng rng(11);
  ParamStore<double> ps;
  PyramidAttentionBlock<double> blk;
  blk.init(ps, rng, "pasca", small_cfg());
  auto x = random_tensor(rng, {1, 8, 4, 6});
  CHECK_THROWS_AS(blk.spatial_channel_attention(x), ContractError);
}

TEST_CASE("full refine schedule runs 5..1 and clamps k to the extent") {
  Rng rng(12);
  ChangeNet<double> model(small_cfg(), 13);
  // k=40 at level 1 of a 32px input must clamp rather than fail.
  model.refine.cfg.k_per_level = {5, 10, 20, 40};
  std::vector<double> va(1 * 3 * 32 * 32), vb(va.size());
  for (auto& v : va) v = rand_unit(rng);
  for (auto& v : vb) v = rand_unit(rng);
  auto a = TensorD::from_values({1, 3, 32, 32}, va);
  auto b = TensorD::from_values({1, 3, 32, 32}, vb);
  NoGradGuard ng;
  auto masks = model.forward(a, b, false);
  CHECK(masks.final_map.shape().h == 16);
}

TEST_SUITE_END();
