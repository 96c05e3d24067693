#pragma once

// Pixel confusion counts and the five evaluation scores, micro-averaged over
// globally accumulated counts.

#include <cstdint>
#include <string>
#include <vector>

#include "cebsnet/tensor.hpp"

namespace cebsnet {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& merge(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct ScoreSet {
  double precision = 0, recall = 0, f1 = 0, oa = 0, iou = 0;
};

// Per-pixel accumulation; associative over batches.
inline void accumulate(const std::vector<std::uint8_t>& pred,
                       const std::vector<std::uint8_t>& gt,
                       ConfusionCounts& acc) {
  check(pred.size() == gt.size(),
        "accumulate: prediction and ground truth sizes differ (" +
            std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
            ")");
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0;
    const bool y = gt[i] != 0;
    if (p && y) {
      ++acc.tp;
    } else if (p && !y) {
      ++acc.fp;
    } else if (!p && y) {
      ++acc.fn;
    } else {
      ++acc.tn;
    }
  }
}

// Zero-denominator conventions: with no predicted positives, precision is 1
// if nothing was missed and 0 otherwise (recall symmetric); F1 and IoU are 1
// when no positives exist in either mask.
inline ScoreSet scores(const ConfusionCounts& c) {
  check(c.total() > 0, "scores: empty confusion counts");
  ScoreSet s;
  const double tp = static_cast<double>(c.tp);
  const double tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp);
  const double fn = static_cast<double>(c.fn);
  s.precision = (c.tp + c.fp > 0) ? tp / (tp + fp) : (c.fn == 0 ? 1.0 : 0.0);
  s.recall = (c.tp + c.fn > 0) ? tp / (tp + fn) : (c.fp == 0 ? 1.0 : 0.0);
  const bool no_positives = (c.tp + c.fp + c.fn) == 0;
  if (no_positives) {
    s.f1 = 1.0;
    s.iou = 1.0;
  } else {
    s.f1 = (s.precision + s.recall > 0)
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    s.iou = tp / (tp + fp + fn);
  }
  s.oa = (tp + tn) / static_cast<double>(c.total());
  return s;
}

// Aligned table plus machine-readable key=value lines, 4 decimal places.
inline std::string format_report(const ScoreSet& s) {
  char buf[256];
  std::string out;
  out += "P       R       F1      OA      IoU\n";
  std::snprintf(buf, sizeof(buf), "%-7.4f %-7.4f %-7.4f %-7.4f %-7.4f\n",
                s.precision, s.recall, s.f1, s.oa, s.iou);
  out += buf;
  std::snprintf(buf, sizeof(buf),
                "P=%.4f\nR=%.4f\nF1=%.4f\nOA=%.4f\nIoU=%.4f\n", s.precision,
                s.recall, s.f1, s.oa, s.iou);
  out += buf;
  return out;
}

}  // namespace cebsnet
