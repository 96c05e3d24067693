#include <doctest.h>

#include <cmath>

#include "cebsnet/gradcheck.hpp"
#include "cebsnet/objective.hpp"

using namespace cebsnet;

TEST_SUITE_BEGIN("objective");

TEST_CASE("zero logits give ln 2 against any labels") {
  auto logits = TensorD::zeros({1, 1, 4, 4});
  std::vector<double> y(16);
  Rng rng(1);
  for (auto& v : y) v = rand_unit(rng) < 0.5 ? 1.0 : 0.0;
  auto gt = TensorD::from_values({1, 1, 4, 4}, y);
  NoGradGuard ng;
  CHECK(bce_with_logits(logits, gt).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("p=0.9 on a positive pixel costs -ln 0.9") {
  auto logits = TensorD::filled({1, 1, 1, 1}, std::log(9.0));
  auto gt = TensorD::filled({1, 1, 1, 1}, 1.0);
  NoGradGuard ng;
  CHECK(bce_with_logits(logits, gt).item() ==
        doctest::Approx(0.1053605).epsilon(1e-6));
}

TEST_CASE("saturated correct predictions drive the loss to zero") {
  auto logits = TensorD::from_values({1, 1, 1, 2}, {40.0, -40.0});
  auto gt = TensorD::from_values({1, 1, 1, 2}, {1.0, 0.0});
  NoGradGuard ng;
  CHECK(bce_with_logits(logits, gt).item() < 1e-15);
}

TEST_CASE("non-binary ground truth is rejected") {
  auto logits = TensorD::zeros({1, 1, 1, 1});
  auto gt = TensorD::filled({1, 1, 1, 1}, 0.25);
  CHECK_THROWS_WITH_AS(bce_with_logits(logits, gt),
                       doctest::Contains("non-binary"), ContractError);
}

TEST_CASE("bce gradient matches finite differences") {
  Rng rng(2);
  auto logits = random_tensor(rng, {2, 1, 3, 3}, -2.0, 2.0);
  std::vector<double> y(18);
  for (auto& v : y) v = rand_unit(rng) < 0.5 ? 1.0 : 0.0;
  auto gt = TensorD::from_values({2, 1, 3, 3}, y);
  auto report = gradcheck(
      [gt](const std::vector<TensorD>& in) {
        return bce_with_logits(in[0], gt);
      },
      {logits});
  CHECK_MESSAGE(report.pass, report.describe());
}

TEST_CASE("all-zero logits total 7 ln 2 across exactly seven terms") {
  MaskSet<double> masks;
  for (size_t i = 0; i < 7; ++i) {
    masks.supervision[i] = TensorD::zeros({1, 1, 8, 8});
  }
  std::vector<double> y(64);
  Rng rng(3);
  for (auto& v : y) v = rand_unit(rng) < 0.4 ? 1.0 : 0.0;
  auto gt = TensorD::from_values({1, 1, 8, 8}, y);
  NoGradGuard ng;
  auto report = total_loss(masks, gt);
  CHECK(report.total == doctest::Approx(7.0 * std::log(2.0)).epsilon(1e-7));
  CHECK(report.terms.size() == 7);
  for (double t : report.terms) {
    CHECK(t == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
}

TEST_CASE("perfectly matching maps cost nearly nothing") {
  MaskSet<double> masks;
  std::vector<double> y(64);
  Rng rng(4);
  for (auto& v : y) v = rand_unit(rng) < 0.4 ? 1.0 : 0.0;
  std::vector<double> saturated(64);
  for (size_t i = 0; i < 64; ++i) saturated[i] = y[i] > 0.5 ? 40.0 : -40.0;
  for (size_t i = 0; i < 7; ++i) {
    masks.supervision[i] = TensorD::from_values({1, 1, 8, 8}, saturated);
  }
  auto gt = TensorD::from_values({1, 1, 8, 8}, y);
  NoGradGuard ng;
  CHECK(total_loss(masks, gt).total < 1e-12);
}

TEST_CASE("loss is invariant to batch permutation") {
  Rng rng(5);
  auto m0 = random_tensor(rng, {1, 1, 6, 6}, -2, 2, false);
  auto m1 = random_tensor(rng, {1, 1, 6, 6}, -2, 2, false);
  std::vector<double> y0(36), y1(36);
  for (auto& v : y0) v = rand_unit(rng) < 0.5 ? 1.0 : 0.0;
  for (auto& v : y1) v = rand_unit(rng) < 0.5 ? 1.0 : 0.0;

  auto stack = [](const TensorD& a, const TensorD& b) {
    std::vector<double> vals = a.values();
    vals.insert(vals.end(), b.values().begin(), b.values().end());
    return TensorD::from_values({2, 1, 6, 6}, vals);
  };
  auto gt01 = stack(TensorD::from_values({1, 1, 6, 6}, y0),
                    TensorD::from_values({1, 1, 6, 6}, y1));
  auto gt10 = stack(TensorD::from_values({1, 1, 6, 6}, y1),
                    TensorD::from_values({1, 1, 6, 6}, y0));

  MaskSet<double> fwd, rev;
  for (size_t i = 0; i < 7; ++i) {
    fwd.supervision[i] = stack(m0, m1);
    rev.supervision[i] = stack(m1, m0);
  }
  NoGradGuard ng;
  CHECK(total_loss(fwd, gt01).total ==
        doctest::Approx(total_loss(rev, gt10).total).epsilon(1e-12));
}

TEST_SUITE_END();
