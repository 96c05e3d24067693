#include "cebsnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace cebsnet {

namespace {

constexpr double kMinChangeFraction = 0.03;
constexpr double kMaxChangeFraction = 0.30;

struct Rgb {
  double r, g, b;
  double ch(int i) const { return i == 0 ? r : (i == 1 ? g : b); }
};

// Smoothed random field: a coarse grid of per-channel offsets around a base
// color, bilinearly upscaled, plus fine texture noise.
std::vector<double> make_background(Rng& rng, i64 size) {
  const Rgb base{rand_uniform(rng, 0.25, 0.75), rand_uniform(rng, 0.25, 0.75),
                 rand_uniform(rng, 0.25, 0.75)};
  const i64 grid = std::max<i64>(2, size / 8);
  std::vector<double> coarse(static_cast<size_t>(grid * grid * 3));
  for (auto& v : coarse) v = rand_uniform(rng, -0.17, 0.17);
  std::vector<double> img(static_cast<size_t>(size * size * 3));
  for (i64 y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) * (grid - 1) / (size - 1);
    const i64 y0 = static_cast<i64>(gy);
    const i64 y1 = std::min(y0 + 1, grid - 1);
    const double fy = gy - static_cast<double>(y0);
    for (i64 x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) * (grid - 1) / (size - 1);
      const i64 x0 = static_cast<i64>(gx);
      const i64 x1 = std::min(x0 + 1, grid - 1);
      const double fx = gx - static_cast<double>(x0);
      for (int c = 0; c < 3; ++c) {
        const double v00 = coarse[static_cast<size_t>((y0 * grid + x0) * 3 + c)];
        const double v01 = coarse[static_cast<size_t>((y0 * grid + x1) * 3 + c)];
        const double v10 = coarse[static_cast<size_t>((y1 * grid + x0) * 3 + c)];
        const double v11 = coarse[static_cast<size_t>((y1 * grid + x1) * 3 + c)];
        const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                         fy * ((1 - fx) * v10 + fx * v11);
        img[static_cast<size_t>((y * size + x) * 3 + c)] =
            std::clamp(base.ch(c) + v, 0.05, 0.95);
      }
    }
  }
  // Fine texture (kept well below object contrast).
  for (auto& v : img) {
    v = std::clamp(v + rand_uniform(rng, -0.015, 0.015), 0.0, 1.0);
  }
  return img;
}

struct ShapeSpec {
  bool ellipse;
  i64 cy, cx, ry, rx;
  Rgb color;
};

void paint(std::vector<double>& img, std::vector<std::uint8_t>* footprint,
           i64 size, const ShapeSpec& s) {
  const i64 y0 = std::max<i64>(0, s.cy - s.ry);
  const i64 y1 = std::min<i64>(size - 1, s.cy + s.ry);
  const i64 x0 = std::max<i64>(0, s.cx - s.rx);
  const i64 x1 = std::min<i64>(size - 1, s.cx + s.rx);
  for (i64 y = y0; y <= y1; ++y) {
    for (i64 x = x0; x <= x1; ++x) {
      if (s.ellipse) {
        const double dy = static_cast<double>(y - s.cy) / s.ry;
        const double dx = static_cast<double>(x - s.cx) / s.rx;
        if (dy * dy + dx * dx > 1.0) continue;
      }
      for (int c = 0; c < 3; ++c) {
        img[static_cast<size_t>((y * size + x) * 3 + c)] = s.color.ch(c);
      }
      if (footprint) (*footprint)[static_cast<size_t>(y * size + x)] = 1;
    }
  }
}

// Object color contrasts with the field by at least ~0.35 in every channel.
Rgb contrast_color(Rng& rng, const std::vector<double>& bg, i64 size, i64 cy,
                   i64 cx) {
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    const double local =
        bg[static_cast<size_t>((cy * size + cx) * 3 + c)];
    const double v = (local > 0.5) ? rand_uniform(rng, 0.0, local - 0.35)
                                   : rand_uniform(rng, local + 0.35, 1.0);
    if (c == 0) out.r = v;
    if (c == 1) out.g = v;
    if (c == 2) out.b = v;
  }
  return out;
}

// Object sized for a pixel-area budget, mostly inside the frame.
ShapeSpec random_shape(Rng& rng, const std::vector<double>& bg, i64 size,
                       double target_px) {
  ShapeSpec s{};
  s.ellipse = rand_unit(rng) < 0.4;
  const double fill = s.ellipse ? 3.14159265358979312 : 4.0;
  const double aspect = rand_uniform(rng, 0.6, 1.6);
  const double ry = std::sqrt(target_px / (fill * aspect));
  s.ry = std::max<i64>(5, static_cast<i64>(std::lround(ry)));
  s.rx = std::max<i64>(5, static_cast<i64>(std::lround(ry * aspect)));
  const auto place = [&](i64 r) {
    const i64 lo = std::min(size - 1, r);
    const i64 hi = std::max<i64>(lo + 1, size - r);
    return lo + rand_index(rng, hi - lo);
  };
  s.cy = place(s.ry);
  s.cx = place(s.rx);
  s.color = contrast_color(rng, bg, size, s.cy, s.cx);
  return s;
}

void apply_nuisance(std::vector<double>& img, Rng& rng, double difficulty) {
  if (difficulty <= 0.0) return;
  const double contrast = 1.0 + rand_uniform(rng, -0.1, 0.1) * difficulty;
  const double global_shift = rand_uniform(rng, -0.06, 0.06) * difficulty;
  double drift[3];
  for (auto& d : drift) d = rand_uniform(rng, -0.06, 0.06) * difficulty;
  const double noise = 0.025 * difficulty;
  for (size_t i = 0; i < img.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    double v = contrast * (img[i] - 0.5) + 0.5 + global_shift + drift[c];
    v += rand_normal(rng) * noise;
    img[i] = std::clamp(v, 0.0, 1.0);
  }
}

ImageU8 quantize_rgb(const std::vector<double>& img, i64 size) {
  ImageU8 out;
  out.width = size;
  out.height = size;
  out.channels = 3;
  out.pixels.resize(static_cast<size_t>(size * size * 3));
  for (size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] =
        static_cast<std::uint8_t>(std::lround(img[i] * 255.0));
  }
  return out;
}

SamplePair generate_one(Rng& rng, i64 size, double difficulty,
                        bool force_null_change, const std::string& id) {
  const auto background = make_background(rng, size);
  std::vector<double> img_a = background;
  std::vector<double> img_b = background;
  std::vector<std::uint8_t> footprint(static_cast<size_t>(size * size), 0);

  if (!force_null_change) {
    for (int attempt = 0;; ++attempt) {
      check(attempt < 200,
            "gen_synthetic: could not hit the change-fraction window");
      img_a = background;
      img_b = background;
      std::fill(footprint.begin(), footprint.end(), 0);
      // Log-uniform change budget spans the dataset-regime ratios
      // (roughly 0.05..0.26 with a median near 0.1). Few, compact objects:
      // perimeter is what a coarse mask pays for.
      const double target =
          std::exp(rand_uniform(rng, std::log(0.04), std::log(0.28)));
      const i64 nobj = 1 + rand_index(rng, 3);
      const double budget_px =
          target * static_cast<double>(size * size) / static_cast<double>(nobj);
      for (i64 i = 0; i < nobj; ++i) {
        const double kr = rand_unit(rng);
        const i64 kind = kr < 0.4 ? 0 : (kr < 0.8 ? 1 : 2);
        ShapeSpec s = random_shape(rng, background, size,
                                   kind == 2 ? budget_px / 2 : budget_px);
        if (kind == 0) {
          paint(img_b, &footprint, size, s);
        } else if (kind == 1) {
          paint(img_a, &footprint, size, s);
        } else {
          paint(img_a, &footprint, size, s);
          // Disjoint destination: overlap would label visually unchanged
          // pixels as changed.
          ShapeSpec moved = s;
          for (int tries = 0; tries < 50; ++tries) {
            moved.cy = rand_index(rng, size);
            moved.cx = rand_index(rng, size);
            const bool overlap =
                std::llabs(moved.cy - s.cy) <= 2 * s.ry &&
                std::llabs(moved.cx - s.cx) <= 2 * s.rx;
            if (!overlap) break;
          }
          paint(img_b, &footprint, size, moved);
        }
      }
      double frac = 0;
      for (auto f : footprint) frac += f;
      frac /= static_cast<double>(size * size);
      if (frac >= kMinChangeFraction && frac <= kMaxChangeFraction) break;
    }
  }

  apply_nuisance(img_b, rng, difficulty);

  SamplePair out;
  out.id = id;
  out.a = quantize_rgb(img_a, size);
  out.b = quantize_rgb(img_b, size);
  out.gt.width = size;
  out.gt.height = size;
  out.gt.channels = 1;
  out.gt.pixels.resize(footprint.size());
  for (size_t i = 0; i < footprint.size(); ++i) {
    out.gt.pixels[i] = footprint[i] ? 255 : 0;
  }
  return out;
}

void check_square_div32(const ImageU8& im, const std::string& what) {
  if (im.width != im.height) {
    throw ContractError(what + ": non-square image " +
                        std::to_string(im.width) + "x" +
                        std::to_string(im.height));
  }
  if (im.width % 32 != 0) {
    throw ContractError(what + ": extent " + std::to_string(im.width) +
                        " not divisible by 32");
  }
}

}  // namespace

double gt_positive_fraction(const ImageU8& gt) {
  double n = 0;
  for (auto p : gt.pixels) n += (p >= 128) ? 1 : 0;
  return n / static_cast<double>(gt.pixels.size());
}

DatasetManifest gen_synthetic(const std::string& root, const GenOptions& opt) {
  check(opt.count >= 1, "gen_synthetic: count must be >= 1");
  check(opt.size >= 32 && opt.size % 32 == 0,
        "gen_synthetic: size must be divisible by 32, got " +
            std::to_string(opt.size));
  check(opt.difficulty >= 0.0, "gen_synthetic: difficulty must be >= 0");

  std::error_code ec;
  fs::create_directories(fs::path(root) / opt.split, ec);
  if (ec) {
    throw IoError("gen_synthetic: cannot create '" + root + "': " +
                  ec.message());
  }

  Rng rng(opt.seed);
  DatasetManifest manifest;
  manifest.root = root;
  manifest.size = opt.size;
  auto& ids = manifest.splits[opt.split];
  for (i64 i = 0; i < opt.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "s%04lld",
                  static_cast<long long>(i));
    SamplePair sp = generate_one(rng, opt.size, opt.difficulty,
                                 opt.force_null_change, name);
    const std::string base = (fs::path(root) / opt.split / name).string();
    write_png(base + "_A.png", sp.a);
    write_png(base + "_B.png", sp.b);
    write_png(base + "_GT.png", sp.gt);
    ids.push_back(name);
  }
  std::ofstream list(fs::path(root) / (opt.split + ".txt"));
  if (!list) {
    throw IoError("gen_synthetic: cannot write manifest under '" + root + "'");
  }
  for (const auto& id : ids) list << id << "\n";
  return manifest;
}

DatasetManifest load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) {
    throw IoError("load_dataset: '" + root + "' is not a directory");
  }
  DatasetManifest manifest;
  manifest.root = root;
  for (const char* split : {"train", "val", "test"}) {
    const fs::path list_path = fs::path(root) / (std::string(split) + ".txt");
    if (!fs::exists(list_path)) continue;
    std::ifstream in(list_path);
    if (!in) throw IoError("load_dataset: cannot read '" + list_path.string() + "'");
    std::string id;
    auto& ids = manifest.splits[split];
    while (std::getline(in, id)) {
      while (!id.empty() && (id.back() == '\r' || id.back() == ' ')) {
        id.pop_back();
      }
      if (id.empty()) continue;
      for (const char* suffix : {"_A.png", "_B.png", "_GT.png"}) {
        const fs::path f = fs::path(root) / split / (id + suffix);
        if (!fs::exists(f)) {
          const std::string what =
              std::string(suffix) == "_GT.png" ? "missing ground truth"
              : std::string(suffix) == "_A.png" ? "missing first image"
                                                : "missing second image";
          throw IoError("load_dataset: " + what + " for sample '" + id +
                        "' (" + f.string() + ")");
        }
      }
      ids.push_back(id);
    }
  }
  check(!manifest.splits.empty(),
        "load_dataset: no split lists found under '" + root + "'");
  for (const auto& [split, ids] : manifest.splits) {
    if (ids.empty()) continue;
    const SamplePair first = read_sample(manifest, split, ids[0]);
    manifest.size = first.a.width;
    break;
  }
  return manifest;
}

SamplePair read_sample(const DatasetManifest& manifest,
                       const std::string& split, const std::string& id) {
  const fs::path dir = fs::path(manifest.root) / split;
  const auto path_of = [&](const char* suffix) {
    return (dir / (id + suffix)).string();
  };
  if (!fs::exists(path_of("_GT.png"))) {
    throw IoError("read_sample: missing ground truth for sample '" + id + "'");
  }
  SamplePair out;
  out.id = id;
  out.a = read_png(path_of("_A.png"), 3);
  out.b = read_png(path_of("_B.png"), 3);
  out.gt = read_png(path_of("_GT.png"), 1);
  check_square_div32(out.a, "sample '" + id + "' image A");
  check_square_div32(out.b, "sample '" + id + "' image B");
  check_square_div32(out.gt, "sample '" + id + "' ground truth");
  check(out.a.width == out.b.width && out.a.width == out.gt.width,
        "sample '" + id + "': image/mask extents disagree");
  for (auto& p : out.gt.pixels) p = (p >= 128) ? 255 : 0;
  return out;
}

namespace {

ImageU8 transform_image(const ImageU8& im, bool hflip, bool vflip,
                        bool transpose) {
  ImageU8 out = im;
  const i64 n = im.width;
  for (i64 y = 0; y < n; ++y) {
    for (i64 x = 0; x < n; ++x) {
      i64 sy = y, sx = x;
      if (transpose) std::swap(sy, sx);
      if (hflip) sx = n - 1 - sx;
      if (vflip) sy = n - 1 - sy;
      for (i64 c = 0; c < im.channels; ++c) {
        out.at(y, x, c) = im.at(sy, sx, c);
      }
    }
  }
  return out;
}

}  // namespace

void augment_sample(SamplePair& sample, Rng& rng) {
  const i64 code = rand_index(rng, 8);
  if (code == 0) return;
  const bool hflip = code & 1;
  const bool vflip = code & 2;
  const bool transpose = code & 4;
  sample.a = transform_image(sample.a, hflip, vflip, transpose);
  sample.b = transform_image(sample.b, hflip, vflip, transpose);
  sample.gt = transform_image(sample.gt, hflip, vflip, transpose);
}

}  // namespace cebsnet
