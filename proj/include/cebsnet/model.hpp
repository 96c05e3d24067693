#pragma once

// Full network assembly: siamese encoding, interleaved refinement and
// decoding (deep levels feed the initial change map, which then guides the
// shallow levels), and the supervised mask set.

#include <functional>
#include <map>
#include <string>

#include "cebsnet/detector.hpp"
#include "cebsnet/encoder.hpp"
#include "cebsnet/refine.hpp"

namespace cebsnet {

// Optional sink for intermediate feature maps (PNG dumps, inspection).
template <typename T>
using DebugSink = std::function<void(const std::string&, const Tensor<T>&)>;

template <typename T>
struct ChangeNet {
  ModelConfig cfg;
  ParamStore<T> params;
  SiameseEncoder<T> encoder;
  RefinePipeline<T> refine;
  ChangeDetector<T> detector;

  explicit ChangeNet(const ModelConfig& c, std::uint64_t seed = 1) : cfg(c) {
    cfg.validate();
    Rng rng(seed);
    encoder.init(params, rng, cfg);
    refine.init(params, rng, cfg);
    detector.init(params, rng, cfg);
  }

  MaskSet<T> forward(const Tensor<T>& img_x, const Tensor<T>& img_y,
                     bool training, const DebugSink<T>* debug = nullptr) {
    const Shape in = img_x.shape();
    auto pairs = encoder.forward(img_x, img_y, training);

    RefineState<T> st;
    for (int lvl = 5; lvl >= 3; --lvl) {
      refine.refine_level(st, pairs, lvl, training);
    }

    MaskSet<T> masks;
    auto db5 = detector.decoder.block5(st.pasca[4], training);
    auto db4 = detector.decoder.block(4, db5, st.pasca[3], training);
    auto db3 = detector.decoder.block(3, db4, st.pasca[2], training);
    masks.level[4] = detector.mask(5, db5, training);
    masks.level[3] = detector.mask(4, db4, training);
    masks.level[2] = detector.mask(3, db3, training);
    masks.initial = detector.fuse_initial(masks.level[4], masks.level[3],
                                          masks.level[2], training);

    refine.set_initial_map(st, masks.initial);
    refine.refine_level(st, pairs, 2, training);
    refine.refine_level(st, pairs, 1, training);

    auto db2 = detector.decoder.block(2, db3, st.pasca[1], training);
    auto db1 = detector.decoder.block(1, db2, st.pasca[0], training);
    masks.level[1] = detector.mask(2, db2, training);
    masks.level[0] = detector.mask(1, db1, training);
    masks.final_map = detector.fuse_final(masks.initial, masks.level[1],
                                          masks.level[0], training);

    for (int i = 0; i < 5; ++i) {
      masks.supervision[static_cast<size_t>(i)] = upsample_bilinear(
          masks.level[static_cast<size_t>(i)], in.h, in.w, cfg.align_corners);
    }
    masks.supervision[5] =
        upsample_bilinear(masks.initial, in.h, in.w, cfg.align_corners);
    masks.supervision[6] =
        upsample_bilinear(masks.final_map, in.h, in.w, cfg.align_corners);

    if (debug) {
      for (int lvl = 1; lvl <= 5; ++lvl) {
        const size_t i = static_cast<size_t>(lvl - 1);
        (*debug)("cgff_l" + std::to_string(lvl), st.cgff[i]);
        if (lvl <= 4) (*debug)("fesm_l" + std::to_string(lvl), st.fesm[i]);
        (*debug)("pasca_l" + std::to_string(lvl), st.pasca[i]);
      }
    }
    return masks;
  }
};

}  // namespace cebsnet
