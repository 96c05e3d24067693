#include <doctest.h>

#include "cebsnet/metrics.hpp"
#include "cebsnet/rng.hpp"

using namespace cebsnet;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("accumulate counts per-pixel outcomes") {
  ConfusionCounts c;
  accumulate({1, 1, 0, 0}, {1, 0, 1, 0}, c);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.fn == 1);
  CHECK(c.tn == 1);

  ConfusionCounts all;
  accumulate(std::vector<std::uint8_t>(10, 1), std::vector<std::uint8_t>(10, 1),
             all);
  CHECK(all.tp == 10);
  CHECK(all.tn + all.fp + all.fn == 0);

  ConfusionCounts inv;
  accumulate({1, 0, 1, 0}, {0, 1, 0, 1}, inv);
  CHECK(inv.tp == 0);
  CHECK(inv.tn == 0);
}

TEST_CASE("accumulate rejects mismatched sizes") {
  ConfusionCounts c;
  CHECK_THROWS_AS(accumulate({1, 0}, {1}, c), ContractError);
}

TEST_CASE("scores match the hand oracle") {
  ConfusionCounts c;
  c.tp = 6;
  c.fp = 2;
  c.fn = 2;
  c.tn = 90;
  const auto s = scores(c);
  CHECK(s.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.recall == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.f1 == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.oa == doctest::Approx(0.96).epsilon(1e-12));
  CHECK(s.iou == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("perfect prediction scores 1 across the board") {
  ConfusionCounts c;
  c.tp = 40;
  c.tn = 60;
  const auto s = scores(c);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == 1.0);
  CHECK(s.f1 == 1.0);
  CHECK(s.oa == 1.0);
  CHECK(s.iou == 1.0);
}

TEST_CASE("no positives anywhere follows the convention") {
  ConfusionCounts c;
  c.tn = 64;
  const auto s = scores(c);
  CHECK(s.precision == 1.0);
  CHECK(s.recall == 1.0);
  CHECK(s.f1 == 1.0);
  CHECK(s.iou == 1.0);
  CHECK(s.oa == 1.0);
}

TEST_CASE("empty counts are rejected") {
  ConfusionCounts c;
  CHECK_THROWS_AS(scores(c), ContractError);
}

TEST_CASE("IoU identity holds over random counts") {
  Rng rng(42);
  for (int i = 0; i < 300; ++i) {
    ConfusionCounts c;
    c.tp = static_cast<std::uint64_t>(rand_index(rng, 500)) + 1;
    c.fp = static_cast<std::uint64_t>(rand_index(rng, 500));
    c.fn = static_cast<std::uint64_t>(rand_index(rng, 500));
    c.tn = static_cast<std::uint64_t>(rand_index(rng, 500));
    const auto s = scores(c);
    CHECK(s.iou == doctest::Approx(s.f1 / (2.0 - s.f1)).epsilon(1e-9));
  }
}

TEST_CASE("report has the table and key=value lines at 4 decimals") {
  ConfusionCounts c;
  c.tp = 6;
  c.fp = 2;
  c.fn = 2;
  c.tn = 90;
  const auto text = format_report(scores(c));
  CHECK(text.find("P=0.7500") != std::string::npos);
  CHECK(text.find("F1=0.7500") != std::string::npos);
  CHECK(text.find("OA=0.9600") != std::string::npos);
  CHECK(text.find("IoU=0.6000") != std::string::npos);
  CHECK(text.find("IoU\n") != std::string::npos);  // table header row
}

TEST_SUITE_END();
