#pragma once

// Optimization loop, evaluation, and history logging.

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cebsnet/checkpoint.hpp"
#include "cebsnet/data.hpp"
#include "cebsnet/metrics.hpp"
#include "cebsnet/model.hpp"
#include "cebsnet/objective.hpp"
#include "cebsnet/optimizer.hpp"

namespace cebsnet {

struct HistoryRow {
  i64 iteration = 0;
  std::array<double, 7> terms{};
  double total = 0;
};

inline std::string history_csv_header() {
  return "iteration,loss_m1,loss_m2,loss_m3,loss_m4,loss_m5,loss_initial,"
         "loss_final,total";
}

inline std::string history_csv_row(const HistoryRow& r) {
  std::ostringstream os;
  os.precision(9);
  os << r.iteration;
  for (double t : r.terms) os << "," << t;
  os << "," << r.total;
  return os.str();
}

struct EvalResult {
  ScoreSet score;
  ConfusionCounts counts;
  i64 samples = 0;
};

// Micro-averaged scores over a split; predictions threshold the final map's
// input-resolution probability at 0.5 (logit 0). Normalization is
// per-sample, so the scores are independent of batching.
template <typename T>
EvalResult evaluate_split(ChangeNet<T>& model, const DatasetManifest& data,
                          const std::string& split, i64 batch_size = 4) {
  const auto& ids = data.ids(split);
  check(!ids.empty(), "evaluate: no samples in split '" + split + "'");
  NoGradGuard ng;
  EvalResult result;
  for (size_t start = 0; start < ids.size();
       start += static_cast<size_t>(batch_size)) {
    const size_t end =
        std::min(ids.size(), start + static_cast<size_t>(batch_size));
    std::vector<SamplePair> samples;
    for (size_t i = start; i < end; ++i) {
      samples.push_back(read_sample(data, split, ids[i]));
    }
    std::vector<const ImageU8*> as, bs, gts;
    for (const auto& s : samples) {
      as.push_back(&s.a);
      bs.push_back(&s.b);
      gts.push_back(&s.gt);
    }
    auto ta = images_to_tensor<T>(as);
    auto tb = images_to_tensor<T>(bs);
    auto masks = model.forward(ta, tb, /*training=*/false);
    const auto& logits = masks.supervision[6].values();
    std::vector<std::uint8_t> pred(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      pred[i] = logits[i] >= T(0) ? 1 : 0;
    }
    std::vector<std::uint8_t> gt;
    gt.reserve(logits.size());
    for (const auto* g : gts) {
      for (auto p : g->pixels) gt.push_back(p >= 128 ? 1 : 0);
    }
    accumulate(pred, gt, result.counts);
    result.samples += static_cast<i64>(samples.size());
  }
  result.score = scores(result.counts);
  return result;
}

template <typename T>
struct TrainResult {
  std::vector<HistoryRow> history;
  std::vector<std::pair<i64, ScoreSet>> val_evals;
  std::string checkpoint_path;
  std::string history_path;
};

// Shuffled mini-batches, deep-supervision loss, Adam steps; deterministic for
// a fixed seed and thread count. Aborts on a non-finite loss.
template <typename T>
TrainResult<T> train(ChangeNet<T>& model, const DatasetManifest& data,
                     const FullConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const auto& ids = data.ids("train");
  check(!ids.empty(), "train: dataset has no training samples");

  std::filesystem::create_directories(out_dir);
  TrainResult<T> result;
  result.history_path = (std::filesystem::path(out_dir) / "history.csv").string();
  std::ofstream csv(result.history_path);
  if (!csv) throw IoError("train: cannot write '" + result.history_path + "'");
  csv << history_csv_header() << "\n";

  // Sample cache; augmentation works on copies.
  std::vector<SamplePair> cache;
  cache.reserve(ids.size());
  for (const auto& id : ids) cache.push_back(read_sample(data, "train", id));

  Rng rng(cfg.train.seed);
  AdamOptimizer<T> adam(model.params, cfg.train);
  i64 iteration = 0;
  bool stop = false;
  for (i64 epoch = 0; epoch < cfg.train.epochs && !stop; ++epoch) {
    std::vector<size_t> order(cache.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1],
                order[static_cast<size_t>(rand_index(rng, static_cast<i64>(i)))]);
    }
    for (size_t start = 0; start < order.size() && !stop;
         start += static_cast<size_t>(cfg.train.batch_size)) {
      const size_t end = std::min(
          order.size(), start + static_cast<size_t>(cfg.train.batch_size));
      std::vector<SamplePair> batch;
      for (size_t i = start; i < end; ++i) {
        batch.push_back(cache[order[i]]);
        if (cfg.train.augment) augment_sample(batch.back(), rng);
      }
      std::vector<const ImageU8*> as, bs, gts;
      for (const auto& s : batch) {
        as.push_back(&s.a);
        bs.push_back(&s.b);
        gts.push_back(&s.gt);
      }
      auto ta = images_to_tensor<T>(as);
      auto tb = images_to_tensor<T>(bs);
      auto gt = masks_to_tensor<T>(gts);

      auto masks = model.forward(ta, tb, /*training=*/true);
      auto report = total_loss(masks, gt, model.cfg.align_corners);
      if (!std::isfinite(static_cast<double>(report.total))) {
        throw ContractError("train: loss diverged to a non-finite value at "
                            "iteration " +
                            std::to_string(iteration));
      }
      model.params.zero_grad();
      report.total_tensor.backward();
      adam.step();

      HistoryRow row;
      row.iteration = iteration;
      for (size_t i = 0; i < 7; ++i) {
        row.terms[i] = static_cast<double>(report.terms[i]);
      }
      row.total = static_cast<double>(report.total);
      csv << history_csv_row(row) << "\n";
      result.history.push_back(row);
      ++iteration;
      if (cfg.train.max_iterations > 0 &&
          iteration >= cfg.train.max_iterations) {
        stop = true;
      }
    }
    if (cfg.train.eval_every > 0 && (epoch + 1) % cfg.train.eval_every == 0 &&
        !data.ids("val").empty()) {
      auto ev = evaluate_split(model, data, "val", cfg.train.batch_size);
      result.val_evals.emplace_back(iteration, ev.score);
    }
  }
  csv.close();

  std::ostringstream rng_state;
  rng_state << rng;
  result.checkpoint_path =
      (std::filesystem::path(out_dir) / "checkpoint_final.ckpt").string();
  save_checkpoint(result.checkpoint_path, cfg, model.params, &adam,
                  static_cast<std::uint64_t>(cfg.train.epochs),
                  static_cast<std::uint64_t>(iteration), rng_state.str());
  return result;
}

}  // namespace cebsnet
