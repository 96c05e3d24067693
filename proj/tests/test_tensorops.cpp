#include <doctest.h>

#include <cmath>

#include "cebsnet/gradcheck.hpp"
#include "cebsnet/ops.hpp"

using namespace cebsnet;

TEST_SUITE_BEGIN("tensorops");

TEST_CASE("conv2d 1x1 scales an all-ones input") {
  auto x = TensorD::filled({1, 1, 3, 3}, 1.0);
  auto w = TensorD::filled({1, 1, 1, 1}, 2.0);
  auto b = TensorD::zeros({1, 1, 1, 1});
  auto y = conv2d(x, w, b, 1, 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("conv2d 3x3 all-ones box sums: center 9, edge 6, corner 4") {
  auto x = TensorD::filled({1, 1, 3, 3}, 1.0);
  auto w = TensorD::filled({1, 1, 3, 3}, 1.0);
  auto b = TensorD::zeros({1, 1, 1, 1});
  auto y = conv2d(x, w, b, 1, 1);
  const auto& v = y.values();
  CHECK(v[4] == doctest::Approx(9.0));  // center
  CHECK(v[1] == doctest::Approx(6.0));  // edge
  CHECK(v[0] == doctest::Approx(4.0));  // corner
  CHECK(v[8] == doctest::Approx(4.0));
}

TEST_CASE("conv2d stride-2 shape arithmetic") {
  auto x = TensorD::filled({1, 1, 4, 4}, 1.0);
  auto w = TensorD::filled({1, 1, 3, 3}, 1.0);
  auto b = TensorD::zeros({1, 1, 1, 1});
  auto y = conv2d(x, w, b, 2, 1);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
}

TEST_CASE("conv2d rejects a channel mismatch by extent") {
  auto x = TensorD::filled({1, 3, 4, 4}, 1.0);
  auto w = TensorD::filled({2, 4, 3, 3}, 1.0);
  auto b = TensorD::zeros({1, 2, 1, 1});
  CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 1),
                       doctest::Contains("channel extent 3"), ContractError);
}

TEST_CASE("maxpool basics") {
  auto x = TensorD::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = maxpool2d(x, 2, 2, 0);
  CHECK(y.numel() == 1);
  CHECK(y.values()[0] == 4.0);

  auto c = TensorD::filled({1, 2, 4, 4}, 0.37);
  auto yc = maxpool2d(c, 2, 2, 0);
  for (double v : yc.values()) CHECK(v == 0.37);

  auto same = maxpool2d(c, 3, 1, 1);
  CHECK(same.shape() == c.shape());
}

TEST_CASE("maxpool rejects a window larger than the padded input") {
  auto x = TensorD::filled({1, 1, 2, 2}, 1.0);
  CHECK_THROWS_AS(maxpool2d(x, 5, 1, 1), ContractError);
}

TEST_CASE("bilinear resize of a constant is the constant") {
  auto x = TensorD::filled({1, 3, 4, 4}, 0.8125);
  auto y = upsample_bilinear(x, 9, 7);
  for (double v : y.values()) CHECK(v == doctest::Approx(0.8125));
}

TEST_CASE("bilinear resize to the same size is the identity") {
  Rng rng(3);
  auto x = random_tensor(rng, {2, 3, 5, 5});
  auto y = upsample_bilinear(x, 5, 5);
  CHECK(y.values() == x.values());
}

TEST_CASE("bilinear 2x2 to 2x4 rows are monotone") {
  auto x = TensorD::from_values({1, 1, 2, 2}, {0, 1, 0, 1});
  auto y = upsample_bilinear(x, 2, 4);
  const auto& v = y.values();
  CHECK(v[0] == doctest::Approx(0.0));
  CHECK(v[1] == doctest::Approx(0.25));
  CHECK(v[2] == doctest::Approx(0.75));
  CHECK(v[3] == doctest::Approx(1.0));
  for (int r = 0; r < 2; ++r) {
    for (int i = 1; i < 4; ++i) CHECK(v[r * 4 + i] >= v[r * 4 + i - 1]);
  }
}

TEST_CASE("softmax of equal logits is uniform") {
  auto x = TensorD::zeros({1, 1, 1, 2});
  auto y = softmax(x, 3);
  CHECK(y.values()[0] == doctest::Approx(0.5));
  CHECK(y.values()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax rejects an out-of-range axis") {
  auto x = TensorD::zeros({1, 1, 1, 2});
  CHECK_THROWS_AS(softmax(x, 4), ContractError);
}

TEST_CASE("abs and gap oracles") {
  auto x = TensorD::from_values({1, 1, 1, 1}, {-3.0});
  CHECK(abs_elementwise(x).values()[0] == 3.0);

  auto g = TensorD::from_values({1, 1, 2, 2}, {1, 3, 5, 7});
  CHECK(global_avg_pool(g).values()[0] == doctest::Approx(4.0));
}

TEST_CASE("concat rejects extent mismatch off the channel axis") {
  auto a = TensorD::zeros({1, 2, 3, 3});
  auto b = TensorD::zeros({1, 2, 4, 3});
  CHECK_THROWS_AS(concat_channels<double>({a, b}), ContractError);
}

TEST_CASE("concat then split is the identity") {
  Rng rng(9);
  auto a = random_tensor(rng, {2, 3, 2, 2});
  auto b = random_tensor(rng, {2, 1, 2, 2});
  auto c = random_tensor(rng, {2, 4, 2, 2});
  auto cat = concat_channels<double>({a, b, c});
  auto parts = split_channels(cat, {3, 1, 4});
  CHECK(parts[0].values() == a.values());
  CHECK(parts[1].values() == b.values());
  CHECK(parts[2].values() == c.values());
}

TEST_CASE("non-finite results are an error state") {
  auto x = TensorD::filled({1, 1, 1, 1}, 1e308);
  auto y = TensorD::filled({1, 1, 1, 1}, 1e308);
  CHECK_THROWS_AS(mul_elementwise(x, y), ContractError);
}

TEST_CASE("gradcheck: linear op") {
  auto x = TensorD::from_values({1, 1, 1, 1}, {0.3}, true);
  auto y = affine(x, 2.0, 0.0);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
  auto report = gradcheck(
      [](const std::vector<TensorD>& in) { return affine(in[0], 2.0, 0.0); },
      {x});
  CHECK(report.pass);
}

TEST_CASE("gradcheck: sigmoid slope at zero is 1/4") {
  auto x = TensorD::zeros({1, 1, 1, 1});
  x.set_requires_grad(true);
  auto y = sigmoid(x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(0.25));
  auto report = gradcheck(
      [](const std::vector<TensorD>& in) { return sigmoid(in[0]); }, {x});
  CHECK(report.pass);
}

TEST_CASE("gradcheck: random conv2d passes at 1e-3") {
  Rng rng(17);
  auto x = random_tensor(rng, {1, 2, 5, 5});
  auto w = random_tensor(rng, {2, 2, 3, 3});
  auto b = random_tensor(rng, {1, 2, 1, 1});
  auto report = gradcheck(
      [](const std::vector<TensorD>& in) {
        return conv2d(in[0], in[1], in[2], 1, 1);
      },
      {x, w, b});
  CHECK_MESSAGE(report.pass, report.describe());
}

TEST_CASE("gradcheck reports the worst element at an unreachable tolerance") {
  Rng rng(18);
  auto x = random_tensor(rng, {1, 1, 3, 3});
  auto report = gradcheck(
      [](const std::vector<TensorD>& in) { return sigmoid(in[0]); }, {x},
      1e-4, 1e-15);
  CHECK_FALSE(report.pass);
  CHECK(report.worst_element >= 0);
}

TEST_CASE("matmul matches a hand product") {
  // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
  auto a = TensorD::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  auto b = TensorD::from_values({1, 1, 2, 2}, {5, 6, 7, 8});
  auto y = matmul(a, b);
  CHECK(y.values() == std::vector<double>{19, 22, 43, 50});
  auto yt = matmul(a, b, false, true);  // A * B^T
  CHECK(yt.values() == std::vector<double>{17, 23, 39, 53});
}

TEST_CASE("backward accumulates through shared inputs") {
  auto x = TensorD::from_values({1, 1, 1, 1}, {1.5}, true);
  auto y = add(x, x);
  y.backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_SUITE_END();
