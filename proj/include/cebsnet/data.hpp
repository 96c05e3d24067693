#pragma once

// Synthetic bitemporal pair generation and on-disk dataset access.
// Layout: root/<split>/<id>_A.png, <id>_B.png, <id>_GT.png with a plain-text
// id list per split at root/<split>.txt.

#include <map>
#include <string>
#include <vector>

#include "cebsnet/png_io.hpp"
#include "cebsnet/rng.hpp"
#include "cebsnet/tensor.hpp"

namespace cebsnet {

struct SamplePair {
  std::string id;
  ImageU8 a, b;  // rgb, [0,255]
  ImageU8 gt;    // gray, values in {0,255} after binarization
};

struct DatasetManifest {
  std::string root;
  i64 size = 0;  // square extent shared by all samples
  std::map<std::string, std::vector<std::string>> splits;

  const std::vector<std::string>& ids(const std::string& split) const {
    static const std::vector<std::string> empty;
    auto it = splits.find(split);
    return it == splits.end() ? empty : it->second;
  }
};

struct GenOptions {
  std::uint64_t seed = 0;
  i64 count = 16;
  i64 size = 64;
  double difficulty = 0.5;
  std::string split = "train";
  bool force_null_change = false;  // no objects, for null-change fixtures
};

// Deterministic for a fixed seed: background is a smoothed random field,
// 1..6 inserted/removed/moved shapes cover 3-30% of pixels (ground truth),
// and brightness/contrast/noise/color nuisance scaled by `difficulty` leaves
// the ground truth untouched.
DatasetManifest gen_synthetic(const std::string& root, const GenOptions& opt);

DatasetManifest load_dataset(const std::string& root);

SamplePair read_sample(const DatasetManifest& manifest,
                       const std::string& split, const std::string& id);

// One of the eight square symmetries (flips and 90-degree rotations),
// applied identically to both images and the mask. Training split only.
void augment_sample(SamplePair& sample, Rng& rng);

double gt_positive_fraction(const ImageU8& gt);

// --- tensor bridging -------------------------------------------------------

template <typename T>
Tensor<T> images_to_tensor(const std::vector<const ImageU8*>& imgs) {
  check(!imgs.empty(), "images_to_tensor: empty batch");
  const i64 h = imgs[0]->height, w = imgs[0]->width, c = imgs[0]->channels;
  std::vector<T> vals(static_cast<size_t>(imgs.size()) *
                      static_cast<size_t>(c * h * w));
  for (size_t n = 0; n < imgs.size(); ++n) {
    const ImageU8& im = *imgs[n];
    check(im.height == h && im.width == w && im.channels == c,
          "images_to_tensor: inconsistent image shapes in batch");
    T* dst = vals.data() + n * static_cast<size_t>(c * h * w);
    for (i64 ch = 0; ch < c; ++ch) {
      for (i64 y = 0; y < h; ++y) {
        for (i64 x = 0; x < w; ++x) {
          dst[(ch * h + y) * w + x] =
              static_cast<T>(im.at(y, x, ch)) / static_cast<T>(255);
        }
      }
    }
  }
  return Tensor<T>::from_values(
      {static_cast<i64>(imgs.size()), c, h, w}, std::move(vals));
}

template <typename T>
Tensor<T> masks_to_tensor(const std::vector<const ImageU8*>& masks) {
  check(!masks.empty(), "masks_to_tensor: empty batch");
  const i64 h = masks[0]->height, w = masks[0]->width;
  std::vector<T> vals(static_cast<size_t>(masks.size()) *
                      static_cast<size_t>(h * w));
  for (size_t n = 0; n < masks.size(); ++n) {
    const ImageU8& m = *masks[n];
    check(m.channels == 1, "masks_to_tensor: mask must be single-channel");
    check(m.height == h && m.width == w,
          "masks_to_tensor: inconsistent mask shapes in batch");
    T* dst = vals.data() + n * static_cast<size_t>(h * w);
    for (i64 i = 0; i < h * w; ++i) {
      dst[i] = m.pixels[static_cast<size_t>(i)] >= 128 ? T(1) : T(0);
    }
  }
  return Tensor<T>::from_values(
      {static_cast<i64>(masks.size()), 1, h, w}, std::move(vals));
}

}  // namespace cebsnet
