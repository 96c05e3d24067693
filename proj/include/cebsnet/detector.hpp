#pragma once

// Multi-scale decoding: per-level decoder blocks propagate deep features to
// shallow levels, mask heads emit single-channel logits, and two fusion
// stages build the initial and final change maps.

#include <array>
#include <string>
#include <vector>

#include "cebsnet/config.hpp"
#include "cebsnet/layers.hpp"

namespace cebsnet {

// Seven logit maps: five per-level masks, the initial map (level-3 size),
// the final map (level-1 size), plus input-resolution copies of all seven
// for supervision.
template <typename T>
struct MaskSet {
  std::array<Tensor<T>, 5> level;  // slot i-1 holds M_i
  Tensor<T> initial;               // level-3 size
  Tensor<T> final_map;             // level-1 size
  // Supervision order: M_1..M_5, initial, final.
  std::array<Tensor<T>, 7> supervision;
};

template <typename T>
struct DecoderBlocks {
  bool align_corners = false;
  Conv2dLayer<T> top;                     // level 5
  std::array<Conv2dLayer<T>, 4> up_proj;  // levels 4..1
  std::array<Conv2dLayer<T>, 4> lat_proj;
  std::array<Conv2dLayer<T>, 4> out_proj;

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    align_corners = cfg.align_corners;
    const i64 d = cfg.fpn_width;
    top.init(ps, rng, "detector.db5", ConvSpec::same(d, d, 1));
    for (int lvl = 4; lvl >= 1; --lvl) {
      const std::string prefix = "detector.db" + std::to_string(lvl);
      const size_t i = static_cast<size_t>(4 - lvl);
      up_proj[i].init(ps, rng, prefix + ".up", ConvSpec::same(d, d, 1));
      lat_proj[i].init(ps, rng, prefix + ".lat", ConvSpec::same(d, d, 1));
      out_proj[i].init(ps, rng, prefix + ".out", ConvSpec::same(d, d, 1));
    }
  }

  Tensor<T> block5(const Tensor<T>& pasca5, bool training) const {
    return top.forward(pasca5, training);
  }

  // F_DB^i from the level above plus the lateral attention output.
  Tensor<T> block(int level, const Tensor<T>& db_next,
                  const Tensor<T>& pasca_i, bool training) const {
    check(level >= 1 && level <= 4, "decoder block: level out of range");
    check(db_next.defined(),
          "decoder: level " + std::to_string(level + 1) +
              " output missing; levels decode in descending order");
    const size_t i = static_cast<size_t>(4 - level);
    const Shape s = pasca_i.shape();
    auto up = upsample_bilinear(db_next, s.h, s.w, align_corners);
    auto fused = add(up_proj[i].forward(up, training),
                     lat_proj[i].forward(pasca_i, training));
    return out_proj[i].forward(fused, training);
  }

  // Convenience one-shot pass over all five levels (descending).
  std::array<Tensor<T>, 5> decode(const std::array<Tensor<T>, 5>& pasca,
                                  bool training) const {
    for (int lvl = 1; lvl <= 5; ++lvl) {
      check(pasca[static_cast<size_t>(lvl - 1)].defined(),
            "decode: missing refined features at level " +
                std::to_string(lvl));
    }
    std::array<Tensor<T>, 5> db;
    db[4] = block5(pasca[4], training);
    for (int lvl = 4; lvl >= 1; --lvl) {
      db[static_cast<size_t>(lvl - 1)] =
          block(lvl, db[static_cast<size_t>(lvl)],
                pasca[static_cast<size_t>(lvl - 1)], training);
    }
    return db;
  }
};

// 3x3 conv (norm+ReLU) then a linear 1x1 down to one logit channel.
template <typename T>
struct MaskHead {
  Conv2dLayer<T> hidden;
  Conv2dLayer<T> out;

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix, i64 d) {
    hidden.init(ps, rng, prefix + ".h", ConvSpec::same(d, d, 3));
    out.init(ps, rng, prefix + ".logit", ConvSpec::linear1x1(d, 1));
  }

  Tensor<T> forward(const Tensor<T>& fdb, bool training) const {
    return out.forward(hidden.forward(fdb, training), training);
  }
};

template <typename T>
struct ChangeDetector {
  bool align_corners = false;
  DecoderBlocks<T> decoder;
  std::array<MaskHead<T>, 5> heads;  // slot i-1 serves level i
  Conv2dLayer<T> fuse_deep;          // [M5, M4, M3] -> initial map
  Conv2dLayer<T> fuse_shallow;       // [initial, M2, M1] -> final map

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    align_corners = cfg.align_corners;
    decoder.init(ps, rng, cfg);
    for (int lvl = 1; lvl <= 5; ++lvl) {
      heads[static_cast<size_t>(lvl - 1)].init(
          ps, rng, "detector.head" + std::to_string(lvl), cfg.fpn_width);
    }
    fuse_deep.init(ps, rng, "detector.fuse_initial", ConvSpec::linear1x1(3, 1));
    fuse_shallow.init(ps, rng, "detector.fuse_final",
                      ConvSpec::linear1x1(3, 1));
  }

  Tensor<T> mask(int level, const Tensor<T>& fdb, bool training) const {
    return heads[static_cast<size_t>(level - 1)].forward(fdb, training);
  }

  // Deep masks resized to level-3 size, concatenated, linearly fused.
  Tensor<T> fuse_initial(const Tensor<T>& m5, const Tensor<T>& m4,
                         const Tensor<T>& m3, bool training) const {
    check(m5.defined() && m4.defined() && m3.defined(),
          "fuse_initial: all three deep masks are required");
    const Shape s = m3.shape();
    auto r5 = upsample_bilinear(m5, s.h, s.w, align_corners);
    auto r4 = upsample_bilinear(m4, s.h, s.w, align_corners);
    return fuse_deep.forward(concat_channels<T>({r5, r4, m3}), training);
  }

  // Initial map and M_2 resized to level-1 size, fused with M_1.
  Tensor<T> fuse_final(const Tensor<T>& initial, const Tensor<T>& m2,
                       const Tensor<T>& m1, bool training) const {
    check(initial.defined() && m2.defined() && m1.defined(),
          "fuse_final: initial map and both shallow masks are required");
    const Shape s = m1.shape();
    auto ri = upsample_bilinear(initial, s.h, s.w, align_corners);
    auto r2 = upsample_bilinear(m2, s.h, s.w, align_corners);
    return fuse_shallow.forward(concat_channels<T>({ri, r2, m1}), training);
  }
};

}  // namespace cebsnet
