#include "cebsnet/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "cebsnet/checkpoint.hpp"
#include "cebsnet/gradcheck.hpp"
#include "cebsnet/data.hpp"
#include "cebsnet/metrics.hpp"
#include "cebsnet/model.hpp"
#include "cebsnet/objective.hpp"
#include "cebsnet/trainer.hpp"

namespace fs = std::filesystem;

namespace cebsnet {

namespace {

ModelConfig tiny_model_cfg() {
  ModelConfig cfg;
  cfg.stage_widths = {4, 4, 8, 8, 8};
  cfg.fpn_width = 8;
  cfg.input_size = 32;
  cfg.k_per_level = {2, 2, 2, 2};
  return cfg;
}

template <typename T>
Tensor<T> random_image(Rng& rng, i64 n, i64 size) {
  std::vector<T> vals(static_cast<size_t>(n * 3 * size * size));
  for (auto& v : vals) v = static_cast<T>(rand_unit(rng));
  return Tensor<T>::from_values({n, 3, size, size}, std::move(vals));
}

bool near(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(static_cast<bool>(in), "selftest: cannot read " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

using CheckFn = std::function<std::string()>;

void run_check(std::vector<CheckResult>& out, const char* suite,
               const char* name, const CheckFn& fn) {
  CheckResult r;
  r.suite = suite;
  r.name = name;
  try {
    r.detail = fn();
    r.pass = r.detail.empty();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  out.push_back(std::move(r));
}

// --- tensorops -------------------------------------------------------------

std::string check_softmax_sums() {
  Rng rng(11);
  for (int axis = 1; axis <= 3; ++axis) {
    for (int s = 0; s < 10; ++s) {
      std::vector<double> vals(2 * 3 * 4 * 5);
      for (auto& v : vals) v = rand_uniform(rng, -30.0, 30.0);
      auto x = TensorD::from_values({2, 3, 4, 5}, vals);
      auto y = softmax(x, axis);
      const Shape sh = y.shape();
      const i64 len = sh[axis];
      const i64 lines = sh.numel() / len;
      // Walk each line by brute-force index arithmetic.
      for (i64 n = 0; n < sh.n; ++n) {
        for (i64 c = 0; c < sh.c; ++c) {
          for (i64 h = 0; h < sh.h; ++h) {
            for (i64 w = 0; w < sh.w; ++w) {
              i64 idx[4] = {n, c, h, w};
              if (idx[axis] != 0) continue;
              double sum = 0;
              for (i64 i = 0; i < len; ++i) {
                idx[axis] = i;
                const i64 off =
                    ((idx[0] * sh.c + idx[1]) * sh.h + idx[2]) * sh.w + idx[3];
                const double v = y.values()[static_cast<size_t>(off)];
                if (v < 0) return "negative softmax output";
                sum += v;
              }
              idx[axis] = 0;
              if (!near(sum, 1.0, 1e-6)) {
                return "softmax line sums to " + std::to_string(sum);
              }
              (void)lines;
            }
          }
        }
      }
    }
  }
  return "";
}

std::string check_concat_split_identity() {
  Rng rng(12);
  for (int s = 0; s < 10; ++s) {
    std::vector<TensorD> parts;
    std::vector<i64> sizes;
    const int nparts = 2 + static_cast<int>(rand_index(rng, 3));
    for (int i = 0; i < nparts; ++i) {
      const i64 c = 1 + rand_index(rng, 4);
      sizes.push_back(c);
      std::vector<double> vals(static_cast<size_t>(2 * c * 3 * 3));
      for (auto& v : vals) v = rand_uniform(rng, -1, 1);
      parts.push_back(TensorD::from_values({2, c, 3, 3}, vals));
    }
    auto cat = concat_channels<double>(parts);
    auto back = split_channels(cat, sizes);
    for (size_t i = 0; i < parts.size(); ++i) {
      if (back[i].values() != parts[i].values()) {
        return "split(concat) differs at part " + std::to_string(i);
      }
    }
  }
  return "";
}

std::string check_maxpool_routing() {
  Rng rng(13);
  auto x = random_separated_tensor(rng, {1, 2, 6, 6});
  auto y = maxpool2d(x, 2, 2, 0);
  std::vector<double> seed(y.values().size(), 1.0);
  y.backward(seed);
  double total = 0;
  for (double g : x.grad()) {
    if (g != 0.0 && g != 1.0) {
      return "routing gradient not in {0,1}: " + std::to_string(g);
    }
    total += g;
  }
  if (total != static_cast<double>(y.numel())) {
    return "gradient mass in != out: " + std::to_string(total);
  }
  return "";
}

// --- encoder -----------------------------------------------------------

std::string check_swap_involution() {
  Rng rng(21);
  for (double r : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    for (auto layout : {SwapLayout::LeadingBlock, SwapLayout::Strided}) {
      std::vector<double> va(1 * 8 * 2 * 2), vb(va.size());
      for (auto& v : va) v = rand_uniform(rng, -1, 1);
      for (auto& v : vb) v = rand_uniform(rng, -1, 1);
      auto fx = TensorD::from_values({1, 8, 2, 2}, va);
      auto fy = TensorD::from_values({1, 8, 2, 2}, vb);
      auto [sx, sy] = channel_swap(fx, fy, r, layout);
      auto [tx, ty] = channel_swap(sx, sy, r, layout);
      if (tx.values() != va || ty.values() != vb) {
        return "double swap is not the identity at r=" + std::to_string(r);
      }
    }
  }
  return "";
}

std::string check_swap_multiset() {
  Rng rng(22);
  for (double r : {0.25, 0.5, 1.0}) {
    std::vector<double> va(1 * 6 * 2 * 2), vb(va.size());
    for (auto& v : va) v = rand_uniform(rng, -1, 1);
    for (auto& v : vb) v = rand_uniform(rng, -1, 1);
    auto fx = TensorD::from_values({1, 6, 2, 2}, va);
    auto fy = TensorD::from_values({1, 6, 2, 2}, vb);
    auto [sx, sy] = channel_swap(fx, fy, r);
    auto slices = [](const TensorD& t) {
      std::vector<std::vector<double>> out;
      for (i64 c = 0; c < t.shape().c; ++c) {
        const auto sl = slice_channels(t, c, 1);
        out.push_back(sl.values());
      }
      return out;
    };
    auto ins = slices(fx);
    auto outs = slices(sx);
    for (auto& s : slices(fy)) ins.push_back(s);
    for (auto& s : slices(sy)) outs.push_back(s);
    std::sort(ins.begin(), ins.end());
    std::sort(outs.begin(), outs.end());
    if (ins != outs) return "swap outputs are not a channel permutation";
  }
  return "";
}

std::string check_siamese_symmetry() {
  Rng rng(23);
  ChangeNet<double> model(tiny_model_cfg(), 5);
  auto img = random_image<double>(rng, 1, 32);
  NoGradGuard ng;
  auto pairs = model.encoder.forward(img, img, false);
  for (int lvl = 1; lvl <= 5; ++lvl) {
    if (pairs.x_level(lvl).values() != pairs.y_level(lvl).values()) {
      return "branches differ at level " + std::to_string(lvl);
    }
  }
  return "";
}

std::string check_encoder_shapes() {
  Rng rng(24);
  ModelConfig cfg = tiny_model_cfg();
  ChangeNet<double> model(cfg, 6);
  auto a = random_image<double>(rng, 2, 64);
  auto b = random_image<double>(rng, 2, 64);
  NoGradGuard ng;
  auto pairs = model.encoder.forward(a, b, false);
  for (int lvl = 1; lvl <= 5; ++lvl) {
    const i64 expected = 64 / ModelConfig::stage_strides[static_cast<size_t>(lvl - 1)];
    const Shape sx = pairs.x_level(lvl).shape();
    const Shape sy = pairs.y_level(lvl).shape();
    if (sx.h != expected || sx.w != expected || sy != sx) {
      return "level " + std::to_string(lvl) + " has shape " + sx.str() +
             ", expected extent " + std::to_string(expected);
    }
    if (sx.c != cfg.fpn_width) {
      return "level " + std::to_string(lvl) + " width " +
             std::to_string(sx.c);
    }
  }
  return "";
}

// --- refine ------------------------------------------------------------

std::string check_region_score_sums() {
  Rng rng(31);
  ParamStore<double> ps;
  ExciteSuppressBlock<double> blk;
  blk.init(ps, rng, "fesm", tiny_model_cfg(), 3);
  for (i64 k : {2, 3, 5}) {
    std::vector<double> vals(1 * 8 * 7 * 7);
    for (auto& v : vals) v = rand_uniform(rng, -2, 2);
    auto fa = TensorD::from_values({1, 8, 7, 7}, vals);
    NoGradGuard ng;
    auto scores = blk.region_scores(fa, k, false);
    double sw = 0, sh = 0, se = 0;
    for (double v : scores.ew.values()) {
      if (v <= 0) return "non-positive strip score";
      sw += v;
    }
    for (double v : scores.eh.values()) sh += v;
    for (double v : scores.e.values()) se += v;
    if (!near(sw, 1.0, 1e-6)) return "E_W sums to " + std::to_string(sw);
    if (!near(sh, 1.0, 1e-6)) return "E_H sums to " + std::to_string(sh);
    if (!near(se, static_cast<double>(k), 1e-5)) {
      return "sum(E) = " + std::to_string(se) + " for k=" + std::to_string(k);
    }
  }
  return "";
}

std::string check_suppression_entries() {
  // Distinct maximum.
  RegionScores<double> scores;
  scores.k = 2;
  scores.e = TensorD::from_values({1, 1, 2, 2}, {0.194, 0.575, 0.425, 0.806});
  auto s = suppression_matrix(scores, 0.3);
  const std::vector<double> want{1.0, 1.0, 1.0, 0.7};
  if (s.values() != want) return "single-max suppression wrong";
  // All ties (uniform grid).
  scores.e = TensorD::from_values({1, 1, 2, 2}, {0.5, 0.5, 0.5, 0.5});
  s = suppression_matrix(scores, 0.25);
  for (double v : s.values()) {
    if (v != 0.75) return "uniform grid should suppress every cell";
  }
  // beta = 0 disables suppression.
  scores.e = TensorD::from_values({1, 1, 2, 2}, {0.1, 0.2, 0.3, 0.4});
  s = suppression_matrix(scores, 0.0);
  for (double v : s.values()) {
    if (v != 1.0) return "beta=0 must leave all entries at 1";
  }
  // Two-way ties.
  scores.e = TensorD::from_values({1, 1, 2, 2}, {0.9, 0.9, 0.1, 0.2});
  s = suppression_matrix(scores, 0.5);
  i64 suppressed = 0;
  for (double v : s.values()) suppressed += (v == 0.5) ? 1 : 0;
  if (suppressed != 2) return "tied maxima must all be suppressed";
  return "";
}

std::string check_two_way_softmax() {
  Rng rng(32);
  for (int i = 0; i < 2000; ++i) {
    const double lf = rand_uniform(rng, -20, 20);
    const double lb = rand_uniform(rng, -20, 20);
    const double rfg = 1.0 / (1.0 + std::exp(-(lf - lb)));
    const double rbg = 1.0 - rfg;
    if (!near(rfg + rbg, 1.0, 1e-6)) return "pair does not sum to 1";
    const double mx = std::max(lf, lb);
    const double ref = std::exp(lf - mx) / (std::exp(lf - mx) + std::exp(lb - mx));
    if (!near(rfg, ref, 1e-9)) {
      return "sigmoid difference form disagrees with the softmax pair";
    }
  }
  // Equal logits split evenly.
  const double r = 1.0 / (1.0 + std::exp(-0.0));
  if (r != 0.5) return "equal logits must give 0.5";
  return "";
}

std::string check_sca_columns_and_gate() {
  Rng rng(33);
  ParamStore<double> ps;
  PyramidAttentionBlock<double> blk;
  blk.init(ps, rng, "pasca", tiny_model_cfg());
  std::vector<double> vals(1 * 8 * 4 * 4);
  for (auto& v : vals) v = rand_uniform(rng, -1.5, 1.5);
  auto x = TensorD::from_values({1, 8, 4, 4}, vals);
  NoGradGuard ng;
  auto qkv = slice_stack(x);
  auto attn = softmax(matmul(qkv, qkv, false, true), 2);
  const Shape as = attn.shape();
  for (i64 sl = 0; sl < as.c; ++sl) {
    for (i64 n = 0; n < as.w; ++n) {
      double col = 0;
      for (i64 m = 0; m < as.h; ++m) {
        col += attn.values()[static_cast<size_t>(
            ((0 * as.c + sl) * as.h + m) * as.w + n)];
      }
      if (!near(col, 1.0, 1e-6)) {
        return "attention column sums to " + std::to_string(col);
      }
    }
  }
  // gamma = 0 (the default init) closes the residual gate exactly.
  auto out = blk.spatial_channel_attention(x);
  if (out.values() != x.values()) return "gamma=0 must be an exact identity";
  return "";
}

std::string check_uneven_partition() {
  for (i64 extent : {7, 10, 128}) {
    for (i64 k : {3, 5, 40}) {
      if (k > extent) continue;
      const auto bounds = partition_bounds(extent, k);
      const i64 base = extent / k;
      i64 cursor = 0;
      for (size_t m = 0; m < bounds.size(); ++m) {
        if (bounds[m].first != cursor) return "partition has a gap";
        const i64 len = bounds[m].second - bounds[m].first;
        if (m + 1 < bounds.size() && len != base) {
          return "non-trailing region is not floor-sized";
        }
        if (m + 1 == bounds.size() &&
            len != base + (extent - base * k)) {
          return "trailing region does not absorb the remainder";
        }
        cursor = bounds[m].second;
      }
      if (cursor != extent) return "partition does not cover the extent";
    }
  }
  return "";
}

std::string check_refine_schedule_guard() {
  Rng rng(34);
  ChangeNet<double> model(tiny_model_cfg(), 7);
  auto a = random_image<double>(rng, 1, 32);
  auto b = random_image<double>(rng, 1, 32);
  NoGradGuard ng;
  auto pairs = model.encoder.forward(a, b, false);
  RefineState<double> st;
  model.refine.refine_level(st, pairs, 5, false);
  bool threw = false;
  try {
    model.refine.refine_level(st, pairs, 3, false);  // skips level 4
  } catch (const ContractError&) {
    threw = true;
  }
  if (!threw) return "out-of-order level did not raise";
  model.refine.refine_level(st, pairs, 4, false);
  model.refine.refine_level(st, pairs, 3, false);
  threw = false;
  try {
    model.refine.refine_level(st, pairs, 2, false);  // no initial map yet
  } catch (const ContractError&) {
    threw = true;
  }
  if (!threw) return "level 2 without the initial map did not raise";
  return "";
}

// --- detector ----------------------------------------------------------

std::string check_maskset_shapes() {
  Rng rng(41);
  ChangeNet<double> model(tiny_model_cfg(), 8);
  for (i64 size : {32, 64}) {
    auto a = random_image<double>(rng, 1, size);
    auto b = random_image<double>(rng, 1, size);
    NoGradGuard ng;
    auto masks = model.forward(a, b, false);
    for (int lvl = 1; lvl <= 5; ++lvl) {
      const i64 expected =
          size / ModelConfig::stage_strides[static_cast<size_t>(lvl - 1)];
      const Shape s = masks.level[static_cast<size_t>(lvl - 1)].shape();
      if (s.c != 1 || s.h != expected || s.w != expected) {
        return "mask level " + std::to_string(lvl) + " has shape " + s.str();
      }
    }
    if (masks.initial.shape().h != size / 8) return "initial map size wrong";
    if (masks.final_map.shape().h != size / 2) return "final map size wrong";
    for (const auto& sup : masks.supervision) {
      if (sup.shape().h != size || sup.shape().w != size || sup.shape().c != 1) {
        return "supervision map not at input resolution";
      }
    }
  }
  return "";
}

std::string check_nonzero_grad_audit() {
  // 64px keeps every level's normalization and strip scores non-degenerate.
  Rng rng(42);
  ChangeNet<double> model(tiny_model_cfg(), 9);
  auto a = random_image<double>(rng, 1, 64);
  auto b = random_image<double>(rng, 1, 64);
  std::vector<double> gt_vals(64 * 64, 0.0);
  for (auto& v : gt_vals) v = rand_unit(rng) < 0.3 ? 1.0 : 0.0;
  auto gt = TensorD::from_values({1, 1, 64, 64}, gt_vals);
  auto masks = model.forward(a, b, true);
  auto report = total_loss(masks, gt);
  model.params.zero_grad();
  report.total_tensor.backward();
  for (const auto& [name, t] : model.params.params()) {
    if (!t.has_grad()) return "parameter '" + name + "' received no gradient";
    double mx = 0;
    for (double g : t.grad()) {
      if (!std::isfinite(g)) return "parameter '" + name + "' has a non-finite gradient";
      mx = std::max(mx, std::fabs(g));
    }
    if (mx == 0.0) return "parameter '" + name + "' has an identically-zero gradient";
  }
  return "";
}

std::string check_decode_order_guard() {
  Rng rng(43);
  ParamStore<double> ps;
  DecoderBlocks<double> dec;
  ModelConfig cfg = tiny_model_cfg();
  dec.init(ps, rng, cfg);
  std::vector<double> vals(1 * 8 * 4 * 4);
  for (auto& v : vals) v = rand_uniform(rng, -1, 1);
  auto pasca4 = TensorD::from_values({1, 8, 4, 4}, vals);
  bool threw = false;
  try {
    NoGradGuard ng;
    dec.block(4, TensorD(), pasca4, false);
  } catch (const ContractError&) {
    threw = true;
  }
  return threw ? "" : "decoding level 4 before level 5 did not raise";
}

// --- objective ----------------------------------------------------------

std::string check_bce_values() {
  auto zero_logits = TensorD::zeros({1, 1, 3, 3});
  auto gt = TensorD::from_values({1, 1, 3, 3},
                                 {1, 0, 1, 0, 1, 0, 1, 0, 1});
  const double ln2 = std::log(2.0);
  {
    NoGradGuard ng;
    auto loss = bce_with_logits(zero_logits, gt);
    if (!near(loss.item(), ln2, 1e-6)) {
      return "bce(0 logits) = " + std::to_string(loss.item());
    }
  }
  {
    // p = 0.9 on a positive label: loss = -ln(0.9).
    NoGradGuard ng;
    auto logits = TensorD::filled({1, 1, 1, 1}, std::log(9.0));
    auto y = TensorD::filled({1, 1, 1, 1}, 1.0);
    auto loss = bce_with_logits(logits, y);
    if (!near(loss.item(), -std::log(0.9), 1e-9)) {
      return "bce(p=0.9, y=1) = " + std::to_string(loss.item());
    }
  }
  {
    // Saturated correct predictions drive the loss to zero.
    NoGradGuard ng;
    auto logits = TensorD::from_values({1, 1, 1, 2}, {30.0, -30.0});
    auto y = TensorD::from_values({1, 1, 1, 2}, {1.0, 0.0});
    auto loss = bce_with_logits(logits, y);
    if (loss.item() > 1e-12) return "saturated bce did not vanish";
  }
  {
    bool threw = false;
    try {
      NoGradGuard ng;
      auto bad = TensorD::filled({1, 1, 1, 1}, 0.5);
      bce_with_logits(zero_logits, bad);
    } catch (const ContractError&) {
      threw = true;
    }
    if (!threw) return "non-binary ground truth did not raise";
  }
  return "";
}

std::string check_total_loss_terms() {
  MaskSet<double> masks;
  for (size_t i = 0; i < 7; ++i) {
    masks.supervision[i] = TensorD::zeros({2, 1, 8, 8});
  }
  std::vector<double> gt_vals(2 * 64);
  Rng rng(51);
  for (auto& v : gt_vals) v = rand_unit(rng) < 0.5 ? 1.0 : 0.0;
  auto gt = TensorD::from_values({2, 1, 8, 8}, gt_vals);
  NoGradGuard ng;
  auto report = total_loss(masks, gt);
  const double want = 7.0 * std::log(2.0);
  if (!near(report.total, want, 1e-5)) {
    return "total = " + std::to_string(report.total);
  }
  double sum = 0;
  for (double t : report.terms) {
    if (t < 0) return "negative per-map loss";
    sum += t;
  }
  if (!near(sum, report.total, 1e-9)) return "terms do not sum to total";
  return "";
}

// --- metrics -------------------------------------------------------------

std::string check_metric_identity() {
  Rng rng(61);
  for (int s = 0; s < 200; ++s) {
    ConfusionCounts c;
    c.tp = static_cast<std::uint64_t>(rand_index(rng, 1000)) + 1;
    c.fp = static_cast<std::uint64_t>(rand_index(rng, 1000));
    c.fn = static_cast<std::uint64_t>(rand_index(rng, 1000));
    c.tn = static_cast<std::uint64_t>(rand_index(rng, 1000));
    const ScoreSet sc = scores(c);
    if (!near(sc.iou, sc.f1 / (2.0 - sc.f1), 1e-9)) {
      return "IoU != F1/(2-F1)";
    }
  }
  return "";
}

std::string check_metric_oracle() {
  Rng rng(62);
  for (int s = 0; s < 120; ++s) {
    const size_t n = 64 + static_cast<size_t>(rand_index(rng, 128));
    std::vector<std::uint8_t> pred(n), gt(n);
    for (size_t i = 0; i < n; ++i) {
      pred[i] = rand_unit(rng) < 0.4 ? 1 : 0;
      gt[i] = rand_unit(rng) < 0.4 ? 1 : 0;
    }
    ConfusionCounts c;
    accumulate(pred, gt, c);
    const ScoreSet sc = scores(c);
    // Brute-force pixel oracle, written independently of the module code.
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < n; ++i) {
      tp += (pred[i] == 1 && gt[i] == 1);
      tn += (pred[i] == 0 && gt[i] == 0);
      fp += (pred[i] == 1 && gt[i] == 0);
      fn += (pred[i] == 0 && gt[i] == 1);
    }
    const double p = (tp + fp) > 0 ? tp / (tp + fp) : (fn == 0 ? 1.0 : 0.0);
    const double r = (tp + fn) > 0 ? tp / (tp + fn) : (fp == 0 ? 1.0 : 0.0);
    const bool none = (tp + fp + fn) == 0;
    const double f1 = none ? 1.0 : ((p + r) > 0 ? 2 * p * r / (p + r) : 0.0);
    const double oa = (tp + tn) / static_cast<double>(n);
    const double iou = none ? 1.0 : tp / (tp + fp + fn);
    if (!near(sc.precision, p, 1e-12) || !near(sc.recall, r, 1e-12) ||
        !near(sc.f1, f1, 1e-12) || !near(sc.oa, oa, 1e-12) ||
        !near(sc.iou, iou, 1e-12)) {
      return "scores disagree with the pixel oracle at seed " +
             std::to_string(s);
    }
  }
  return "";
}

std::string check_metric_batch_order() {
  Rng rng(63);
  std::vector<std::vector<std::uint8_t>> preds, gts;
  for (int b = 0; b < 6; ++b) {
    std::vector<std::uint8_t> p(50), g(50);
    for (size_t i = 0; i < 50; ++i) {
      p[i] = rand_unit(rng) < 0.5;
      g[i] = rand_unit(rng) < 0.5;
    }
    preds.push_back(p);
    gts.push_back(g);
  }
  ConfusionCounts fwd, rev;
  for (size_t b = 0; b < preds.size(); ++b) accumulate(preds[b], gts[b], fwd);
  for (size_t b = preds.size(); b-- > 0;) accumulate(preds[b], gts[b], rev);
  if (fwd.tp != rev.tp || fwd.tn != rev.tn || fwd.fp != rev.fp ||
      fwd.fn != rev.fn) {
    return "accumulation is not order-invariant";
  }
  return "";
}

std::string check_metric_conventions() {
  {
    ConfusionCounts c;
    c.tn = 100;
    const ScoreSet s = scores(c);
    if (s.precision != 1.0 || s.recall != 1.0 || s.f1 != 1.0 ||
        s.iou != 1.0 || s.oa != 1.0) {
      return "all-negative convention broken";
    }
  }
  {
    ConfusionCounts c;
    c.tp = 6;
    c.fp = 2;
    c.fn = 2;
    c.tn = 90;
    const ScoreSet s = scores(c);
    if (!near(s.precision, 0.75, 1e-12) || !near(s.recall, 0.75, 1e-12) ||
        !near(s.f1, 0.75, 1e-12) || !near(s.oa, 0.96, 1e-12) ||
        !near(s.iou, 0.6, 1e-12)) {
      return "hand-computed counts disagree";
    }
  }
  {
    ConfusionCounts c;
    c.fp = 5;
    c.fn = 5;
    const ScoreSet s = scores(c);
    if (s.precision != 0.0 || s.recall != 0.0 || s.f1 != 0.0) {
      return "inverted prediction convention broken";
    }
  }
  return "";
}

// --- data ---------------------------------------------------------------

std::string check_generator_determinism(const fs::path& scratch) {
  GenOptions opt;
  opt.seed = 77;
  opt.count = 2;
  opt.size = 32;
  opt.difficulty = 0.7;
  const auto d1 = (scratch / "det1").string();
  const auto d2 = (scratch / "det2").string();
  gen_synthetic(d1, opt);
  gen_synthetic(d2, opt);
  for (const auto& entry : fs::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), d1);
    const auto other = fs::path(d2) / rel;
    if (read_file_bytes(entry.path().string()) !=
        read_file_bytes(other.string())) {
      return "files differ: " + rel.string();
    }
  }
  return "";
}

std::string check_null_change(const fs::path& scratch) {
  GenOptions opt;
  opt.seed = 5;
  opt.count = 1;
  opt.size = 32;
  opt.difficulty = 0.0;
  opt.force_null_change = true;
  const auto dir = (scratch / "null").string();
  auto manifest = gen_synthetic(dir, opt);
  auto sample = read_sample(manifest, "train", manifest.ids("train")[0]);
  if (sample.a.pixels != sample.b.pixels) {
    return "difficulty 0 with no objects must leave the pair identical";
  }
  for (auto p : sample.gt.pixels) {
    if (p != 0) return "null change must have an all-zero mask";
  }
  return "";
}

std::string check_roundtrip_and_fraction(const fs::path& scratch) {
  GenOptions opt;
  opt.seed = 7;
  opt.count = 4;
  opt.size = 64;
  opt.difficulty = 0.5;
  const auto dir = (scratch / "round").string();
  gen_synthetic(dir, opt);
  auto manifest = load_dataset(dir);
  if (manifest.ids("train").size() != 4) return "manifest id count wrong";
  for (const auto& id : manifest.ids("train")) {
    auto sp = read_sample(manifest, "train", id);
    const double frac = gt_positive_fraction(sp.gt);
    if (frac < 0.03 || frac > 0.30) {
      return "sample " + id + " change fraction " + std::to_string(frac);
    }
  }
  return "";
}

std::string check_gt_binarization(const fs::path& scratch) {
  const auto dir = scratch / "binarize" / "train";
  fs::create_directories(dir);
  ImageU8 rgb;
  rgb.width = rgb.height = 32;
  rgb.channels = 3;
  rgb.pixels.assign(32 * 32 * 3, 100);
  ImageU8 gt;
  gt.width = gt.height = 32;
  gt.channels = 1;
  gt.pixels.assign(32 * 32, 200);  // above threshold, not pure white
  write_png((dir / "x_A.png").string(), rgb);
  write_png((dir / "x_B.png").string(), rgb);
  write_png((dir / "x_GT.png").string(), gt);
  std::ofstream list(scratch / "binarize" / "train.txt");
  list << "x\n";
  list.close();
  auto manifest = load_dataset((scratch / "binarize").string());
  auto sp = read_sample(manifest, "train", "x");
  for (auto p : sp.gt.pixels) {
    if (p != 255) return "value 200 must binarize to changed";
  }
  auto t = masks_to_tensor<double>({&sp.gt});
  for (double v : t.values()) {
    if (v != 1.0) return "mask tensor must be exactly 1";
  }
  return "";
}

// --- trainer --------------------------------------------------------------

std::string check_adam_reference() {
  ParamStore<double> ps;
  auto theta = ps.add_param("theta", TensorD::scalar(0.7));
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  AdamOptimizer<double> adam(ps, tc);
  theta.zero_grad();
  theta.grad_mut()[0] = 0.3;
  adam.step();
  // Textbook update computed by hand.
  const double m = 0.1 * 0.3;
  const double v = 0.001 * 0.09;
  const double mhat = m / 0.1;
  const double vhat = v / 0.001;
  const double want = 0.7 - 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);
  if (!near(theta.values()[0], want, 1e-10)) {
    return "adam step differs from the scalar reference by " +
           std::to_string(std::fabs(theta.values()[0] - want));
  }
  return "";
}

std::string check_zero_lr(const fs::path& scratch) {
  GenOptions opt;
  opt.seed = 9;
  opt.count = 2;
  opt.size = 32;
  const auto dir = (scratch / "zerolr").string();
  auto manifest = gen_synthetic(dir, opt);
  FullConfig cfg;
  cfg.model = tiny_model_cfg();
  cfg.train.learning_rate = 0.0;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 1;
  cfg.train.seed = 3;
  ChangeNet<float> model(cfg.model, 11);
  std::vector<std::vector<float>> before;
  for (const auto& [name, t] : model.params.params()) before.push_back(t.values());
  train(model, manifest, cfg, (scratch / "zerolr_out").string());
  size_t i = 0;
  for (const auto& [name, t] : model.params.params()) {
    if (t.values() != before[i]) {
      return "parameter '" + name + "' changed under zero learning rate";
    }
    ++i;
  }
  return "";
}

std::string check_checkpoint_roundtrip(const fs::path& scratch) {
  FullConfig cfg;
  cfg.model = tiny_model_cfg();
  ChangeNet<float> model(cfg.model, 21);
  Rng rng(22);
  auto a = random_image<float>(rng, 1, 32);
  auto b = random_image<float>(rng, 1, 32);
  NoGradGuard ng;
  auto before = model.forward(a, b, false);
  const auto path = (scratch / "model.ckpt").string();
  save_checkpoint<float>(path, cfg, model.params, nullptr, 0, 0, "rngstate");

  ChangeNet<float> other(cfg.model, 99);  // different init
  load_checkpoint(path, other.params);
  auto after = other.forward(a, b, false);
  if (before.supervision[6].values() != after.supervision[6].values()) {
    return "reloaded forward is not bitwise identical";
  }

  // Flip one byte in the middle: the checksum must reject the file.
  auto bytes = read_file_bytes(path);
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x5a);
  const auto bad = (scratch / "model_bad.ckpt").string();
  std::ofstream out(bad, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  ChangeNet<float> victim(cfg.model, 100);
  try {
    load_checkpoint(bad, victim.params);
    return "corrupted checkpoint was accepted";
  } catch (const IoError&) {
  }

  // Shape mismatch names the parameter.
  ModelConfig wide = cfg.model;
  wide.fpn_width = 16;
  ChangeNet<float> mismatched(wide, 101);
  try {
    load_checkpoint(path, mismatched.params);
    return "shape mismatch was accepted";
  } catch (const ContractError& e) {
    if (std::string(e.what()).find("shape") == std::string::npos) {
      return std::string("mismatch diagnostic lacks the shape: ") + e.what();
    }
  }
  return "";
}

std::string check_history_determinism(const fs::path& scratch) {
  GenOptions opt;
  opt.seed = 31;
  opt.count = 4;
  opt.size = 32;
  const auto dir = (scratch / "hist").string();
  auto manifest = gen_synthetic(dir, opt);
  FullConfig cfg;
  cfg.model = tiny_model_cfg();
  cfg.train.batch_size = 2;
  cfg.train.epochs = 2;
  cfg.train.seed = 13;
  std::string csv[2];
  for (int run = 0; run < 2; ++run) {
    ChangeNet<float> model(cfg.model, 55);
    auto res = train(model, manifest, cfg,
                     (scratch / ("hist_run" + std::to_string(run))).string());
    csv[run] = read_file_bytes(res.history_path);
  }
  if (csv[0] != csv[1]) return "two identically-seeded runs produced different history";
  return "";
}

}  // namespace

std::vector<CheckResult> run_selftest(const std::string& scratch_dir) {
  const fs::path scratch(scratch_dir);
  fs::create_directories(scratch);
  std::vector<CheckResult> results;

  run_check(results, "tensorops", "softmax_normalization", check_softmax_sums);
  run_check(results, "tensorops", "concat_split_identity",
            check_concat_split_identity);
  run_check(results, "tensorops", "maxpool_gradient_routing",
            check_maxpool_routing);
  run_check(results, "encoder", "channel_swap_involution",
            check_swap_involution);
  run_check(results, "encoder", "channel_multiset_preservation",
            check_swap_multiset);
  run_check(results, "encoder", "siamese_symmetry", check_siamese_symmetry);
  run_check(results, "encoder", "pyramid_shape_contract",
            check_encoder_shapes);
  run_check(results, "refine", "region_score_sums", check_region_score_sums);
  run_check(results, "refine", "suppression_matrix_entries",
            check_suppression_entries);
  run_check(results, "refine", "two_way_softmax", check_two_way_softmax);
  run_check(results, "refine", "attention_columns_and_gate",
            check_sca_columns_and_gate);
  run_check(results, "refine", "uneven_partition", check_uneven_partition);
  run_check(results, "refine", "schedule_guard", check_refine_schedule_guard);
  run_check(results, "detector", "maskset_shape_contract",
            check_maskset_shapes);
  run_check(results, "detector", "nonzero_gradient_audit",
            check_nonzero_grad_audit);
  run_check(results, "detector", "decode_order_guard",
            check_decode_order_guard);
  run_check(results, "objective", "bce_values", check_bce_values);
  run_check(results, "objective", "total_loss_seven_terms",
            check_total_loss_terms);
  run_check(results, "metrics", "iou_f1_identity", check_metric_identity);
  run_check(results, "metrics", "pixel_oracle", check_metric_oracle);
  run_check(results, "metrics", "batch_order_invariance",
            check_metric_batch_order);
  run_check(results, "metrics", "degenerate_conventions",
            check_metric_conventions);
  run_check(results, "data", "generator_determinism",
            [&] { return check_generator_determinism(scratch); });
  run_check(results, "data", "null_change",
            [&] { return check_null_change(scratch); });
  run_check(results, "data", "roundtrip_and_change_fraction",
            [&] { return check_roundtrip_and_fraction(scratch); });
  run_check(results, "data", "gt_binarization",
            [&] { return check_gt_binarization(scratch); });
  run_check(results, "trainer", "adam_reference_step", check_adam_reference);
  run_check(results, "trainer", "zero_lr_bitwise",
            [&] { return check_zero_lr(scratch); });
  run_check(results, "trainer", "checkpoint_roundtrip",
            [&] { return check_checkpoint_roundtrip(scratch); });
  run_check(results, "trainer", "history_determinism",
            [&] { return check_history_determinism(scratch); });

  std::error_code ec;
  fs::remove_all(scratch, ec);
  return results;
}

}  // namespace cebsnet
