#pragma once

// Deep-supervision objective: mean binary cross-entropy per map, summed with
// unit weights over the five level masks plus the initial and final maps.

#include <array>
#include <string>

#include "cebsnet/detector.hpp"
#include "cebsnet/ops.hpp"

namespace cebsnet {

template <typename T>
struct LossReport {
  // Term order: M_1..M_5, initial, final.
  std::array<T, 7> terms{};
  T total = 0;
  Tensor<T> total_tensor;  // scalar on the tape, for backward()

  static constexpr std::array<const char*, 7> term_names{
      "m1", "m2", "m3", "m4", "m5", "initial", "final"};
};

template <typename T>
LossReport<T> total_loss(const MaskSet<T>& masks, const Tensor<T>& gt,
                         bool align_corners = false) {
  const Shape gs = gt.shape();
  check(gs.c == 1, "total_loss: ground truth must be single-channel, got " +
                       gs.str());
  LossReport<T> report;
  Tensor<T> acc;
  for (size_t i = 0; i < 7; ++i) {
    Tensor<T> m = masks.supervision[i];
    check(m.defined(), "total_loss: missing supervision map " +
                           std::string(LossReport<T>::term_names[i]));
    if (m.shape().h != gs.h || m.shape().w != gs.w) {
      m = upsample_bilinear(m, gs.h, gs.w, align_corners);
    }
    check_same_shape(m.shape(), gs, "total_loss");
    Tensor<T> term = bce_with_logits(m, gt);
    report.terms[i] = term.item();
    acc = (i == 0) ? term : add(acc, term);
  }
  report.total_tensor = acc;
  report.total = acc.item();
  return report;
}

}  // namespace cebsnet
