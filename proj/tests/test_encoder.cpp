#include <doctest.h>

#include "cebsnet/encoder.hpp"
#include "cebsnet/gradcheck.hpp"

using namespace cebsnet;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.stage_widths = {4, 4, 8, 8, 8};
  cfg.fpn_width = 8;
  cfg.input_size = 64;
  cfg.k_per_level = {2, 2, 2, 2};
  return cfg;
}

TensorD image(Rng& rng, i64 n, i64 size) {
  std::vector<double> vals(static_cast<size_t>(n * 3 * size * size));
  for (auto& v : vals) v = rand_unit(rng);
  return TensorD::from_values({n, 3, size, size}, std::move(vals));
}

}  // namespace

TEST_SUITE_BEGIN("encoder");

TEST_CASE("channel swap exchanges the leading block") {
  // C=4, r=1/4: exactly channel 0 moves.
  std::vector<double> vx, vy;
  for (int c = 0; c < 4; ++c) {
    vx.push_back(10.0 + c);
    vy.push_back(20.0 + c);
  }
  auto fx = TensorD::from_values({1, 4, 1, 1}, vx);
  auto fy = TensorD::from_values({1, 4, 1, 1}, vy);
  auto [ox, oy] = channel_swap(fx, fy, 0.25);
  CHECK(ox.values() == std::vector<double>{20, 11, 12, 13});
  CHECK(oy.values() == std::vector<double>{10, 21, 22, 23});
}

TEST_CASE("channel swap with ratio zero is the identity") {
  Rng rng(4);
  auto fx = random_tensor(rng, {1, 6, 2, 2});
  auto fy = random_tensor(rng, {1, 6, 2, 2});
  auto [ox, oy] = channel_swap(fx, fy, 0.0);
  CHECK(ox.values() == fx.values());
  CHECK(oy.values() == fy.values());
}

TEST_CASE("channel swap is an involution for every ratio") {
  Rng rng(5);
  for (double r : {0.25, 0.5, 0.75, 1.0}) {
    auto fx = random_tensor(rng, {2, 8, 2, 2});
    auto fy = random_tensor(rng, {2, 8, 2, 2});
    auto [sx, sy] = channel_swap(fx, fy, r);
    auto [tx, ty] = channel_swap(sx, sy, r);
    CHECK(tx.values() == fx.values());
    CHECK(ty.values() == fy.values());
  }
}

TEST_CASE("channel swap rejects mismatched shapes") {
  auto fx = TensorD::zeros({1, 4, 2, 2});
  auto fy = TensorD::zeros({1, 4, 2, 3});
  CHECK_THROWS_AS(channel_swap(fx, fy, 0.25), ContractError);
}

TEST_CASE("swap mask floors r*C") {
  auto mask = swap_mask(64, 0.25, SwapLayout::LeadingBlock);
  i64 n = 0;
  for (auto m : mask) n += m;
  CHECK(n == 16);
  mask = swap_mask(5, 0.5, SwapLayout::LeadingBlock);
  n = 0;
  for (auto m : mask) n += m;
  CHECK(n == 2);  // floor(2.5)
}

TEST_CASE("backbone stage extents follow the stride plan") {
  Rng rng(6);
  ParamStore<double> ps;
  Backbone<double> bb;
  Rng prng(1);
  bb.init(ps, prng, small_cfg());
  NoGradGuard ng;
  auto feats = bb.forward(image(rng, 1, 64), false);
  const i64 expect[5] = {32, 16, 8, 4, 2};
  for (int i = 0; i < 5; ++i) {
    CHECK(feats[static_cast<size_t>(i)].shape().h == expect[i]);
    CHECK(feats[static_cast<size_t>(i)].shape().w == expect[i]);
  }
}

TEST_CASE("backbone rejects inputs not divisible by 32") {
  ParamStore<double> ps;
  Backbone<double> bb;
  Rng prng(1);
  bb.init(ps, prng, small_cfg());
  auto bad = TensorD::zeros({1, 3, 48, 48});
  CHECK_THROWS_WITH_AS(bb.forward(bad, false),
                       doctest::Contains("divisible by 32"), ContractError);
}

TEST_CASE("same image through both branches gives identical stage features") {
  Rng rng(7);
  ParamStore<double> ps;
  Backbone<double> bb;
  Rng prng(2);
  bb.init(ps, prng, small_cfg());
  auto img = image(rng, 1, 32);
  NoGradGuard ng;
  auto fa = bb.forward(img, false);
  auto fb = bb.forward(img, false);
  for (int i = 0; i < 5; ++i) {
    CHECK(fa[static_cast<size_t>(i)].values() ==
          fb[static_cast<size_t>(i)].values());
  }
}

TEST_CASE("encode_pair emits the pyramid contract for a batch of 2") {
  Rng rng(8);
  ParamStore<double> ps;
  SiameseEncoder<double> enc;
  Rng prng(3);
  const auto cfg = small_cfg();
  enc.init(ps, prng, cfg);
  NoGradGuard ng;
  auto pairs = enc.forward(image(rng, 2, 64), image(rng, 2, 64), false);
  for (int lvl = 1; lvl <= 5; ++lvl) {
    const Shape sx = pairs.x_level(lvl).shape();
    CHECK(sx.n == 2);
    CHECK(sx.c == cfg.fpn_width);
    CHECK(sx.h == 64 / ModelConfig::stage_strides[static_cast<size_t>(lvl - 1)]);
    CHECK(sx == pairs.y_level(lvl).shape());
  }
}

TEST_CASE("identical inputs produce bitwise-equal pyramid branches") {
  Rng rng(9);
  ParamStore<double> ps;
  SiameseEncoder<double> enc;
  Rng prng(4);
  enc.init(ps, prng, small_cfg());
  auto img = image(rng, 1, 32);
  NoGradGuard ng;
  auto pairs = enc.forward(img, img, false);
  for (int lvl = 1; lvl <= 5; ++lvl) {
    CHECK(pairs.x_level(lvl).values() == pairs.y_level(lvl).values());
  }
}

TEST_SUITE_END();
