#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cebsnet/data.hpp"

namespace fs = std::filesystem;
using namespace cebsnet;

namespace {

struct Scratch {
  fs::path dir;
  explicit Scratch(const char* tag)
      : dir(fs::temp_directory_path() /
            (std::string("cebsnet-data-test-") + tag)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("generation is byte-deterministic per seed") {
  Scratch scratch("det");
  GenOptions opt;
  opt.seed = 123;
  opt.count = 3;
  opt.size = 32;
  opt.difficulty = 1.0;
  gen_synthetic((scratch.dir / "a").string(), opt);
  gen_synthetic((scratch.dir / "b").string(), opt);
  for (const auto& entry :
       fs::recursive_directory_iterator(scratch.dir / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), scratch.dir / "a");
    CHECK_MESSAGE(slurp(entry.path()) == slurp(scratch.dir / "b" / rel),
                  rel.string());
  }
}

TEST_CASE("seed 7, count 16, size 64: every change fraction is in [0.03,0.30]") {
  Scratch scratch("frac");
  GenOptions opt;
  opt.seed = 7;
  opt.count = 16;
  opt.size = 64;
  opt.difficulty = 0.5;
  auto manifest = gen_synthetic((scratch.dir / "d").string(), opt);
  REQUIRE(manifest.ids("train").size() == 16);
  for (const auto& id : manifest.ids("train")) {
    const auto sp = read_sample(manifest, "train", id);
    const double f = gt_positive_fraction(sp.gt);
    CHECK(f >= 0.03);
    CHECK(f <= 0.30);
  }
}

TEST_CASE("null-change fixtures have identical images and empty masks") {
  Scratch scratch("null");
  GenOptions opt;
  opt.seed = 11;
  opt.count = 1;
  opt.size = 32;
  opt.difficulty = 0.0;
  opt.force_null_change = true;
  auto manifest = gen_synthetic((scratch.dir / "d").string(), opt);
  auto sp = read_sample(manifest, "train", manifest.ids("train")[0]);
  CHECK(sp.a.pixels == sp.b.pixels);
  for (auto p : sp.gt.pixels) CHECK(p == 0);
}

TEST_CASE("nuisance alone never marks ground truth") {
  Scratch scratch("nuis");
  GenOptions opt;
  opt.seed = 12;
  opt.count = 1;
  opt.size = 32;
  opt.difficulty = 1.5;
  opt.force_null_change = true;
  auto manifest = gen_synthetic((scratch.dir / "d").string(), opt);
  auto sp = read_sample(manifest, "train", manifest.ids("train")[0]);
  CHECK(sp.a.pixels != sp.b.pixels);  // heavy nuisance does move pixels
  for (auto p : sp.gt.pixels) CHECK(p == 0);
}

TEST_CASE("generate then load round-trips pixels exactly") {
  Scratch scratch("round");
  GenOptions opt;
  opt.seed = 13;
  opt.count = 2;
  opt.size = 32;
  const auto root = (scratch.dir / "d").string();
  auto gen = gen_synthetic(root, opt);
  auto loaded = load_dataset(root);
  CHECK(loaded.size == 32);
  for (const auto& id : gen.ids("train")) {
    auto a = read_sample(gen, "train", id);
    auto b = read_sample(loaded, "train", id);
    CHECK(a.a.pixels == b.a.pixels);
    CHECK(a.b.pixels == b.b.pixels);
    CHECK(a.gt.pixels == b.gt.pixels);
  }
}

TEST_CASE("missing ground truth names the sample") {
  Scratch scratch("missing");
  GenOptions opt;
  opt.seed = 14;
  opt.count = 1;
  opt.size = 32;
  const auto root = (scratch.dir / "d").string();
  auto manifest = gen_synthetic(root, opt);
  fs::remove(fs::path(root) / "train" / "s0000_GT.png");
  CHECK_THROWS_WITH_AS(read_sample(manifest, "train", "s0000"),
                       doctest::Contains("missing ground truth"), IoError);
  CHECK_THROWS_AS(load_dataset(root), IoError);
}

TEST_CASE("generator rejects sizes not divisible by 32") {
  GenOptions opt;
  opt.size = 50;
  CHECK_THROWS_WITH_AS(gen_synthetic("/tmp/unused-dir-never-created", opt),
                       doctest::Contains("divisible by 32"), ContractError);
}

TEST_CASE("augmentation applies one symmetry to all three images") {
  Scratch scratch("aug");
  GenOptions opt;
  opt.seed = 15;
  opt.count = 1;
  opt.size = 32;
  auto manifest = gen_synthetic((scratch.dir / "d").string(), opt);
  auto base = read_sample(manifest, "train", "s0000");

  Rng rng(2);  // first draw lands on a non-identity symmetry
  auto sample = base;
  augment_sample(sample, rng);
  if (sample.a.pixels != base.a.pixels) {
    // Pixel multiset is preserved by any flip/rotation.
    auto sorted = [](std::vector<std::uint8_t> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    CHECK(sorted(sample.a.pixels) == sorted(base.a.pixels));
    CHECK(sorted(sample.gt.pixels) == sorted(base.gt.pixels));
  }
  // Ground truth stays aligned: pick a changed pixel and verify the same
  // transform moved image content with it.
  const double frac_before = gt_positive_fraction(base.gt);
  const double frac_after = gt_positive_fraction(sample.gt);
  CHECK(frac_before == doctest::Approx(frac_after).epsilon(1e-12));
}

TEST_CASE("tensor bridges scale to [0,1] and binarize masks") {
  ImageU8 img;
  img.width = img.height = 32;
  img.channels = 3;
  img.pixels.assign(32 * 32 * 3, 51);
  auto t = images_to_tensor<double>({&img});
  CHECK(t.shape() == Shape{1, 3, 32, 32});
  for (double v : t.values()) CHECK(v == doctest::Approx(0.2));

  ImageU8 gt;
  gt.width = gt.height = 32;
  gt.channels = 1;
  gt.pixels.assign(32 * 32, 0);
  gt.pixels[5] = 200;
  gt.pixels[6] = 127;
  auto m = masks_to_tensor<double>({&gt});
  CHECK(m.values()[5] == 1.0);
  CHECK(m.values()[6] == 0.0);
}

TEST_SUITE_END();
