#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cebsnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace cebsnet;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.stage_widths = {4, 4, 8, 8, 8};
  cfg.fpn_width = 8;
  cfg.input_size = 32;
  cfg.k_per_level = {2, 2, 2, 2};
  return cfg;
}

struct Scratch {
  fs::path dir;
  explicit Scratch(const char* tag)
      : dir(fs::temp_directory_path() /
            (std::string("cebsnet-trainer-test-") + tag)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

DatasetManifest tiny_dataset(const fs::path& dir, std::uint64_t seed,
                             i64 count) {
  GenOptions opt;
  opt.seed = seed;
  opt.count = count;
  opt.size = 32;
  opt.difficulty = 0.3;
  return gen_synthetic(dir.string(), opt);
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("one adam step matches the scalar reference to 1e-10") {
  ParamStore<double> ps;
  auto theta = ps.add_param("theta", TensorD::scalar(-0.25));
  TrainConfig tc;
  AdamOptimizer<double> adam(ps, tc);
  theta.zero_grad();
  theta.grad_mut()[0] = 1.7;

  double m = 0, v = 0, x = -0.25;
  const double g = 1.7;
  m = 0.9 * m + 0.1 * g;
  v = 0.999 * v + 0.001 * g * g;
  const double mhat = m / (1.0 - 0.9);
  const double vhat = v / (1.0 - 0.999);
  x -= 1e-3 * mhat / (std::sqrt(vhat) + 1e-8);

  adam.step();
  CHECK(std::fabs(theta.values()[0] - x) < 1e-10);

  // Second step with a new gradient.
  theta.zero_grad();
  theta.grad_mut()[0] = -0.4;
  m = 0.9 * m + 0.1 * -0.4;
  v = 0.999 * v + 0.001 * 0.16;
  x -= 1e-3 * (m / (1.0 - 0.81)) / (std::sqrt(v / (1.0 - 0.999 * 0.999)) + 1e-8);
  adam.step();
  CHECK(std::fabs(theta.values()[0] - x) < 1e-10);
}

TEST_CASE("zero learning rate leaves parameters bitwise unchanged") {
  Scratch scratch("zerolr");
  auto manifest = tiny_dataset(scratch.dir / "d", 1, 2);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  cfg.train.learning_rate = 0.0;
  cfg.train.batch_size = 2;
  cfg.train.epochs = 1;
  ChangeNet<float> model(cfg.model, 2);
  std::vector<std::vector<float>> before;
  for (const auto& [name, t] : model.params.params()) {
    before.push_back(t.values());
  }
  train(model, manifest, cfg, (scratch.dir / "out").string());
  size_t i = 0;
  for (const auto& [name, t] : model.params.params()) {
    CHECK_MESSAGE(t.values() == before[i], name);
    ++i;
  }
}

TEST_CASE("same seed twice gives identical loss curves") {
  Scratch scratch("det");
  auto manifest = tiny_dataset(scratch.dir / "d", 3, 4);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  cfg.train.batch_size = 2;
  cfg.train.epochs = 2;
  cfg.train.seed = 9;
  std::string csvs[2];
  for (int run = 0; run < 2; ++run) {
    ChangeNet<float> model(cfg.model, 7);
    auto res = train(model, manifest, cfg,
                     (scratch.dir / ("run" + std::to_string(run))).string());
    CHECK(res.history.size() == 4);  // 2 epochs x 2 batches
    csvs[run] = slurp(res.history_path);
  }
  CHECK(csvs[0] == csvs[1]);
  CHECK(csvs[0].rfind("iteration,loss_m1", 0) == 0);
}

TEST_CASE("training loss falls on an easy overfit set") {
  Scratch scratch("drop");
  auto manifest = tiny_dataset(scratch.dir / "d", 5, 2);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  cfg.train.batch_size = 2;
  cfg.train.epochs = 30;
  ChangeNet<float> model(cfg.model, 5);
  auto res = train(model, manifest, cfg, (scratch.dir / "out").string());
  CHECK(res.history.back().total < res.history.front().total);
}

TEST_CASE("checkpoint save/load reproduces forward bitwise") {
  Scratch scratch("ckpt");
  FullConfig cfg;
  cfg.model = tiny_cfg();
  ChangeNet<float> model(cfg.model, 11);
  Rng rng(12);
  std::vector<float> va(3 * 32 * 32), vb(va.size());
  for (auto& v : va) v = static_cast<float>(rand_unit(rng));
  for (auto& v : vb) v = static_cast<float>(rand_unit(rng));
  auto a = TensorF::from_values({1, 3, 32, 32}, va);
  auto b = TensorF::from_values({1, 3, 32, 32}, vb);
  NoGradGuard ng;
  auto before = model.forward(a, b, false);
  const auto path = (scratch.dir / "m.ckpt").string();
  save_checkpoint<float>(path, cfg, model.params, nullptr, 3, 17, "state");

  const auto info = read_checkpoint_info(path);
  CHECK(info.epoch == 3);
  CHECK(info.iteration == 17);
  CHECK(info.config.model.fpn_width == cfg.model.fpn_width);

  ChangeNet<float> fresh(cfg.model, 999);
  load_checkpoint(path, fresh.params);
  auto after = fresh.forward(a, b, false);
  for (size_t i = 0; i < 7; ++i) {
    CHECK(before.supervision[i].values() == after.supervision[i].values());
  }
}

TEST_CASE("a truncated checkpoint fails its checksum") {
  Scratch scratch("trunc");
  FullConfig cfg;
  cfg.model = tiny_cfg();
  ChangeNet<float> model(cfg.model, 13);
  const auto path = (scratch.dir / "m.ckpt").string();
  save_checkpoint<float>(path, cfg, model.params, nullptr, 0, 0, "");
  auto bytes = slurp(path);
  bytes.resize(bytes.size() - 40);
  const auto bad = (scratch.dir / "bad.ckpt").string();
  std::ofstream(bad, std::ios::binary).write(bytes.data(),
                                             static_cast<std::streamsize>(bytes.size()));
  ChangeNet<float> victim(cfg.model, 14);
  CHECK_THROWS_WITH_AS(load_checkpoint(bad, victim.params),
                       doctest::Contains("checksum"), IoError);
}

TEST_CASE("loading into a wider model names the parameter") {
  Scratch scratch("shape");
  FullConfig cfg;
  cfg.model = tiny_cfg();
  ChangeNet<float> model(cfg.model, 15);
  const auto path = (scratch.dir / "m.ckpt").string();
  save_checkpoint<float>(path, cfg, model.params, nullptr, 0, 0, "");
  ModelConfig wide = cfg.model;
  wide.fpn_width = 16;
  ChangeNet<float> mismatched(wide, 16);
  CHECK_THROWS_WITH_AS(load_checkpoint(path, mismatched.params),
                       doctest::Contains("shape"), ContractError);
}

TEST_CASE("training with augmentation enabled stays deterministic") {
  Scratch scratch("augtrain");
  auto manifest = tiny_dataset(scratch.dir / "d", 23, 2);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  cfg.train.batch_size = 2;
  cfg.train.epochs = 2;
  cfg.train.augment = true;
  cfg.train.seed = 5;
  std::string csvs[2];
  for (int run = 0; run < 2; ++run) {
    ChangeNet<float> model(cfg.model, 31);
    auto res = train(model, manifest, cfg,
                     (scratch.dir / ("r" + std::to_string(run))).string());
    csvs[run] = slurp(res.history_path);
  }
  CHECK(csvs[0] == csvs[1]);
}

TEST_CASE("untrained model on balanced data scores near the majority rate") {
  // Half the pixels changed: majority rate 0.5, and any prediction field has
  // expected OA 0.5 on balanced labels.
  Scratch scratch("baseline");
  const fs::path dir = scratch.dir / "d" / "val";
  fs::create_directories(dir);
  Rng rng(4);
  for (int i = 0; i < 4; ++i) {
    ImageU8 a, b, gt;
    a.width = a.height = 32;
    a.channels = 3;
    a.pixels.resize(32 * 32 * 3);
    for (auto& p : a.pixels) p = static_cast<std::uint8_t>(rand_index(rng, 256));
    b = a;
    for (auto& p : b.pixels) {
      p = static_cast<std::uint8_t>(
          std::clamp<i64>(p + rand_index(rng, 21) - 10, 0, 255));
    }
    gt.width = gt.height = 32;
    gt.channels = 1;
    gt.pixels.assign(32 * 32, 0);
    for (i64 y = 0; y < 16; ++y) {
      for (i64 x = 0; x < 32; ++x) gt.pixels[static_cast<size_t>(y * 32 + x)] = 255;
    }
    const std::string id = "b" + std::to_string(i);
    write_png((dir / (id + "_A.png")).string(), a);
    write_png((dir / (id + "_B.png")).string(), b);
    write_png((dir / (id + "_GT.png")).string(), gt);
    std::ofstream(scratch.dir / "d" / "val.txt", std::ios::app) << id << "\n";
  }
  auto manifest = load_dataset((scratch.dir / "d").string());
  ChangeNet<float> model(tiny_cfg(), 21);
  auto ev = evaluate_split(model, manifest, "val", 2);
  CHECK(std::fabs(ev.score.oa - 0.5) <= 0.15);
}

TEST_CASE("evaluating an empty split is an explicit error") {
  Scratch scratch("empty");
  auto manifest = tiny_dataset(scratch.dir / "d", 17, 2);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  ChangeNet<float> model(cfg.model, 18);
  CHECK_THROWS_WITH_AS(evaluate_split(model, manifest, "test", 2),
                       doctest::Contains("no samples"), ContractError);
}

TEST_CASE("evaluation is batch-size independent") {
  Scratch scratch("batches");
  auto manifest = tiny_dataset(scratch.dir / "d", 19, 5);
  FullConfig cfg;
  cfg.model = tiny_cfg();
  ChangeNet<float> model(cfg.model, 20);
  auto e1 = evaluate_split(model, manifest, "train", 1);
  auto e2 = evaluate_split(model, manifest, "train", 4);
  CHECK(e1.counts.tp == e2.counts.tp);
  CHECK(e1.counts.tn == e2.counts.tn);
  CHECK(e1.counts.fp == e2.counts.fp);
  CHECK(e1.counts.fn == e2.counts.fn);
}

TEST_SUITE_END();
