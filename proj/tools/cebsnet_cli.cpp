// cebsnet command-line toolkit: dataset generation, training, evaluation,
// prediction, and the verification suites.
//
// Exit codes: 0 success, 1 contract violation (bad flags/config/shapes),
// 2 I/O error (unreadable or unwritable files).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cebsnet/checkpoint.hpp"
#include "cebsnet/data.hpp"
#include "cebsnet/gradcheck.hpp"
#include "cebsnet/model.hpp"
#include "cebsnet/selftest.hpp"
#include "cebsnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace cebsnet;

namespace {

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("CEBSNET_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) omp_set_num_threads(n);
  }
#endif
}

FullConfig load_config_file(const std::string& path) {
  if (path.empty()) return FullConfig{};
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Mean-over-channels, min-max normalized grayscale dump.
template <typename T>
ImageU8 feature_to_image(const Tensor<T>& t) {
  const Shape s = t.shape();
  ImageU8 img;
  img.width = s.w;
  img.height = s.h;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(s.h * s.w));
  std::vector<double> mean(static_cast<size_t>(s.h * s.w), 0.0);
  const auto& v = t.values();
  for (i64 c = 0; c < s.c; ++c) {
    for (i64 i = 0; i < s.h * s.w; ++i) {
      mean[static_cast<size_t>(i)] +=
          static_cast<double>(v[static_cast<size_t>(c * s.h * s.w + i)]);
    }
  }
  double lo = mean[0], hi = mean[0];
  for (double m : mean) {
    lo = std::min(lo, m);
    hi = std::max(hi, m);
  }
  const double scale = (hi > lo) ? 255.0 / (hi - lo) : 0.0;
  for (size_t i = 0; i < mean.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(
        std::lround((mean[i] - lo) * scale));
  }
  return img;
}

template <typename T>
ImageU8 probability_to_image(const Tensor<T>& logits) {
  const Shape s = logits.shape();
  ImageU8 img;
  img.width = s.w;
  img.height = s.h;
  img.channels = 1;
  img.pixels.resize(static_cast<size_t>(s.h * s.w));
  for (i64 i = 0; i < s.h * s.w; ++i) {
    const double z = static_cast<double>(logits.values()[static_cast<size_t>(i)]);
    const double p = 1.0 / (1.0 + std::exp(-z));
    img.pixels[static_cast<size_t>(i)] =
        static_cast<std::uint8_t>(std::lround(p * 255.0));
  }
  return img;
}

int cmd_gen_data(const std::string& out, i64 count, i64 size,
                 std::uint64_t seed, double difficulty,
                 const std::string& split) {
  GenOptions opt;
  opt.seed = seed;
  opt.count = count;
  opt.size = size;
  opt.difficulty = difficulty;
  opt.split = split;
  auto manifest = gen_synthetic(out, opt);
  double lo = 1.0, hi = 0.0, mean = 0.0;
  for (const auto& id : manifest.ids(split)) {
    const auto sp = read_sample(manifest, split, id);
    const double f = gt_positive_fraction(sp.gt);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
    mean += f;
  }
  mean /= static_cast<double>(count);
  std::cout << "generated " << count << " pairs (size " << size << ", seed "
            << seed << ", difficulty " << difficulty << ") under " << out
            << "/" << split << "\n";
  std::printf("change fraction: min %.4f mean %.4f max %.4f\n", lo, mean, hi);
  return 0;
}

template <typename T>
int run_train(const FullConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
  auto manifest = load_dataset(data_dir);
  ChangeNet<T> model(cfg.model, cfg.train.seed);
  std::cout << "model parameters: " << model.params.param_count() << "\n";
  if (cfg.train.epochs == 0) {
    const std::string split = manifest.ids("val").empty() ? "train" : "val";
    auto ev = evaluate_split(model, manifest, split, cfg.train.batch_size);
    std::cout << "validation-only pass on split '" << split << "' ("
              << ev.samples << " samples); no checkpoint written\n"
              << format_report(ev.score);
    return 0;
  }
  auto result = train(model, manifest, cfg, out_dir);
  const auto& last = result.history.back();
  std::printf("trained %lld iterations; final total loss %.6f\n",
              static_cast<long long>(last.iteration + 1), last.total);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n"
            << "history:    " << result.history_path << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir, i64 epochs_override) {
  FullConfig cfg = load_config_file(config_path);
  if (epochs_override >= 0) cfg.train.epochs = epochs_override;
  cfg.validate();
  if (cfg.model.precision == Precision::Double) {
    return run_train<double>(cfg, data_dir, out_dir);
  }
  return run_train<float>(cfg, data_dir, out_dir);
}

template <typename T>
int run_eval(const CheckpointInfo& info, const std::string& ckpt,
             const std::string& data_dir, const std::string& split) {
  auto manifest = load_dataset(data_dir);
  ChangeNet<T> model(info.config.model, 1);
  load_checkpoint(ckpt, model.params);
  auto ev = evaluate_split(model, manifest, split,
                           info.config.train.batch_size);
  std::cout << "split '" << split << "': " << ev.samples << " samples, "
            << ev.counts.total() << " pixels\n"
            << format_report(ev.score);
  if (ev.counts.tp + ev.counts.fp == 0 || ev.counts.tp + ev.counts.fn == 0) {
    std::cout << "note: a side has no positive pixels; P/R/F1/IoU follow the "
                 "no-positives convention (1 when nothing was missed)\n";
  }
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt,
             const std::string& split) {
  const auto info = read_checkpoint_info(ckpt);
  if (info.config.model.precision == Precision::Double) {
    return run_eval<double>(info, ckpt, data_dir, split);
  }
  return run_eval<float>(info, ckpt, data_dir, split);
}

template <typename T>
int run_predict(const CheckpointInfo& info, const std::string& ckpt,
                const std::string& a_path, const std::string& b_path,
                const std::string& out_path, const std::string& dump_dir) {
  ImageU8 a = read_png(a_path, 3);
  ImageU8 b = read_png(b_path, 3);
  if (a.width != b.width || a.height != b.height) {
    throw ContractError("predict: image sizes differ: '" + a_path + "' is " +
                        std::to_string(a.width) + "x" +
                        std::to_string(a.height) + ", '" + b_path + "' is " +
                        std::to_string(b.width) + "x" +
                        std::to_string(b.height));
  }
  ChangeNet<T> model(info.config.model, 1);
  load_checkpoint(ckpt, model.params);

  NoGradGuard ng;
  auto ta = images_to_tensor<T>({&a});
  auto tb = images_to_tensor<T>({&b});
  std::map<std::string, Tensor<T>> dumped;
  DebugSink<T> sink = [&dumped](const std::string& name, const Tensor<T>& t) {
    dumped.emplace(name, t);
  };
  auto masks = model.forward(ta, tb, false, dump_dir.empty() ? nullptr : &sink);

  const auto& logits = masks.supervision[6];
  ImageU8 pred;
  pred.width = logits.shape().w;
  pred.height = logits.shape().h;
  pred.channels = 1;
  pred.pixels.resize(static_cast<size_t>(pred.width * pred.height));
  i64 changed = 0;
  for (size_t i = 0; i < pred.pixels.size(); ++i) {
    const bool hit = logits.values()[i] >= T(0);
    pred.pixels[i] = hit ? 255 : 0;
    changed += hit;
  }
  write_png(out_path, pred);
  std::printf("wrote %s (%.2f%% changed)\n", out_path.c_str(),
              100.0 * static_cast<double>(changed) /
                  static_cast<double>(pred.pixels.size()));

  if (!dump_dir.empty()) {
    fs::create_directories(dump_dir);
    for (int lvl = 1; lvl <= 5; ++lvl) {
      write_png((fs::path(dump_dir) / ("m" + std::to_string(lvl) + ".png"))
                    .string(),
                probability_to_image(masks.level[static_cast<size_t>(lvl - 1)]));
    }
    write_png((fs::path(dump_dir) / "m_initial.png").string(),
              probability_to_image(masks.initial));
    write_png((fs::path(dump_dir) / "m_final.png").string(),
              probability_to_image(masks.final_map));
    for (const auto& [name, t] : dumped) {
      write_png((fs::path(dump_dir) / ("feat_" + name + ".png")).string(),
                feature_to_image(t));
    }
    std::cout << "intermediate maps under " << dump_dir << "\n";
  }
  return 0;
}

int cmd_predict(const std::string& a_path, const std::string& b_path,
                const std::string& ckpt, const std::string& out_path,
                const std::string& dump_dir) {
  const auto info = read_checkpoint_info(ckpt);
  if (info.config.model.precision == Precision::Double) {
    return run_predict<double>(info, ckpt, a_path, b_path, out_path, dump_dir);
  }
  return run_predict<float>(info, ckpt, a_path, b_path, out_path, dump_dir);
}

int cmd_gradcheck(const std::string& module, double tol, int seeds) {
  const auto lines = run_gradcheck_suite(module, tol, seeds);
  if (lines.empty()) {
    throw ContractError("gradcheck: unknown module '" + module + "'");
  }
  int failures = 0;
  for (const auto& line : lines) {
    if (line.pass) {
      std::printf("[PASS] %s/%s (seeds=%d, max_rel=%.2e)\n",
                  line.module.c_str(), line.name.c_str(), line.seeds,
                  line.max_rel_err);
    } else {
      ++failures;
      std::printf("[FAIL] %s/%s: %s\n", line.module.c_str(),
                  line.name.c_str(), line.detail.c_str());
    }
  }
  std::printf("%zu checks, %d failures\n", lines.size(), failures);
  return failures == 0 ? 0 : 1;
}

int cmd_selftest() {
  const auto scratch =
      fs::temp_directory_path() /
      ("cebsnet-selftest-" + std::to_string(::getpid()));
  const auto results = run_selftest(scratch.string());
  int failures = 0;
  for (const auto& r : results) {
    if (r.pass) {
      std::printf("[PASS] %s/%s\n", r.suite.c_str(), r.name.c_str());
    } else {
      ++failures;
      std::printf("[FAIL] %s/%s: %s\n", r.suite.c_str(), r.name.c_str(),
                  r.detail.c_str());
    }
  }
  std::printf("%zu checks, %d failures\n", results.size(), failures);
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"cebsnet: bitemporal change detection toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  std::string gen_out, gen_split = "train";
  i64 gen_count = 16, gen_size = 64;
  std::uint64_t gen_seed = 0;
  double gen_difficulty = 0.5;
  gen->add_option("--out", gen_out, "Output dataset root")->required();
  gen->add_option("--count", gen_count, "Number of pairs");
  gen->add_option("--size", gen_size, "Square image extent (divisible by 32)");
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--difficulty", gen_difficulty, "Nuisance amplitude >= 0");
  gen->add_option("--split", gen_split, "Split name (train|val|test)");

  // train
  auto* tr = app.add_subcommand("train", "Train on a dataset");
  std::string tr_data, tr_config, tr_out;
  i64 tr_epochs = -1;
  tr->add_option("--data", tr_data, "Dataset root")->required();
  tr->add_option("--config", tr_config, "key=value config file");
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--epochs", tr_epochs, "Override epoch count");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ev_data, ev_ckpt, ev_split = "test";
  ev->add_option("--data", ev_data, "Dataset root")->required();
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--split", ev_split, "Split to evaluate");

  // predict
  auto* pr = app.add_subcommand("predict", "Predict a change map");
  std::string pr_a, pr_b, pr_ckpt, pr_out, pr_dump;
  pr->add_option("--a", pr_a, "First image (PNG)")->required();
  pr->add_option("--b", pr_b, "Second image (PNG)")->required();
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint file")->required();
  pr->add_option("--out", pr_out, "Output change-map PNG")->required();
  pr->add_option("--dump-intermediate", pr_dump,
                 "Directory for per-level maps");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck",
                                "Finite-difference gradient verification");
  std::string gc_module;
  double gc_tol = 1e-3;
  int gc_seeds = 20;
  gc->add_option("--module", gc_module,
                 "tensorops|refine|detector|objective (default: all)");
  gc->add_option("--tol", gc_tol, "Relative tolerance");
  gc->add_option("--seeds", gc_seeds, "Random shapes per operation");

  // selftest
  app.add_subcommand("selftest", "Run every invariant suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      return cmd_gen_data(gen_out, gen_count, gen_size, gen_seed,
                          gen_difficulty, gen_split);
    }
    if (tr->parsed()) return cmd_train(tr_data, tr_config, tr_out, tr_epochs);
    if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_split);
    if (pr->parsed()) return cmd_predict(pr_a, pr_b, pr_ckpt, pr_out, pr_dump);
    if (gc->parsed()) return cmd_gradcheck(gc_module, gc_tol, gc_seeds);
    return cmd_selftest();
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
