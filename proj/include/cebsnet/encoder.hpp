#pragma once

// Siamese feature extraction: a weight-shared 5-stage backbone, top-down
// lateral fusion to a common pyramid width, and the parameter-free channel
// swap that exchanges a leading block of channels between the two temporal
// branches at every level.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "cebsnet/config.hpp"
#include "cebsnet/layers.hpp"

namespace cebsnet {

// Swapped channel index mask for a given layout; floor(r*C) channels move.
inline std::vector<std::uint8_t> swap_mask(i64 channels, double ratio,
                                           SwapLayout layout) {
  check(ratio >= 0.0 && ratio <= 1.0,
        "channel_swap: ratio out of [0,1]: " + std::to_string(ratio));
  const i64 nswap = static_cast<i64>(ratio * static_cast<double>(channels));
  std::vector<std::uint8_t> mask(static_cast<size_t>(channels), 0);
  if (nswap <= 0) return mask;
  if (layout == SwapLayout::LeadingBlock) {
    for (i64 c = 0; c < nswap; ++c) mask[static_cast<size_t>(c)] = 1;
  } else {
    for (i64 j = 0; j < nswap; ++j) {
      const i64 c = j * channels / nswap;
      mask[static_cast<size_t>(c)] = 1;
    }
  }
  return mask;
}

// Exchanges the masked channels between the pair; an involution, and the
// union of output channels is exactly the union of input channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> channel_swap(
    const Tensor<T>& fx, const Tensor<T>& fy, double ratio,
    SwapLayout layout = SwapLayout::LeadingBlock) {
  check_same_shape(fx.shape(), fy.shape(), "channel_swap");
  const auto mask = swap_mask(fx.shape().c, ratio, layout);
  bool any = false;
  for (auto m : mask) any |= (m != 0);
  if (!any) return {fx, fy};
  return {channel_mix(fx, fy, mask), channel_mix(fy, fx, mask)};
}

// Five stages of two 3x3 conv(+norm+ReLU) followed by a stride-2 maxpool;
// stage i output has stride 2^i and stage_widths[i-1] channels.
template <typename T>
struct Backbone {
  std::array<ConvStack<T>, 5> stages;

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& cfg) {
    i64 cin = 3;
    for (int s = 0; s < 5; ++s) {
      const i64 width = cfg.stage_widths[static_cast<size_t>(s)];
      stages[static_cast<size_t>(s)].init(
          ps, rng, "backbone.stage" + std::to_string(s + 1), cin, width,
          {3, 3});
      cin = width;
    }
  }

  std::array<Tensor<T>, 5> forward(const Tensor<T>& image,
                                   bool training) const {
    const Shape s = image.shape();
    check(s.c == 3, "backbone: expected 3-channel input, got " + s.str());
    check(s.h == s.w, "backbone: non-square input " + s.str());
    check(s.h % 32 == 0, "backbone: input extent " + std::to_string(s.h) +
                             " not divisible by 32");
    std::array<Tensor<T>, 5> feats;
    Tensor<T> x = image;
    for (int i = 0; i < 5; ++i) {
      x = stages[static_cast<size_t>(i)].forward(x, training);
      x = maxpool2d(x, 2, 2, 0);
      feats[static_cast<size_t>(i)] = x;
    }
    return feats;
  }
};

// Per-level feature pair at a common pyramid width.
template <typename T>
struct FeaturePyramidPair {
  // Index 0 holds level 1 (finest, stride 2) ... index 4 holds level 5.
  std::array<Tensor<T>, 5> fx;
  std::array<Tensor<T>, 5> fy;

  const Tensor<T>& x_level(int level) const {
    return fx[static_cast<size_t>(level - 1)];
  }
  const Tensor<T>& y_level(int level) const {
    return fy[static_cast<size_t>(level - 1)];
  }
};

// Top-down fusion: level 5 is a 1x1 reduction of the deepest stage; lower
// levels concatenate the stage feature with the upsampled swapped output of
// the level above and pass through two 3x3 convolutions. The swap runs at
// every level; both branches share all parameters.
template <typename T>
struct SiameseEncoder {
  ModelConfig cfg;
  Backbone<T> backbone;
  Conv2dLayer<T> reduce5;
  std::array<ConvStack<T>, 4> lateral;  // levels 4,3,2,1

  void init(ParamStore<T>& ps, Rng& rng, const ModelConfig& c) {
    cfg = c;
    backbone.init(ps, rng, c);
    reduce5.init(ps, rng, "encoder.reduce5",
                 ConvSpec::same(c.stage_widths[4], c.fpn_width, 1));
    for (int level = 4; level >= 1; --level) {
      const i64 stage_w = c.stage_widths[static_cast<size_t>(level - 1)];
      lateral[static_cast<size_t>(4 - level)].init(
          ps, rng, "encoder.lateral" + std::to_string(level),
          stage_w + c.fpn_width, c.fpn_width, {3, 3});
    }
  }

  FeaturePyramidPair<T> forward(const Tensor<T>& img_x, const Tensor<T>& img_y,
                                bool training) const {
    check_same_shape(img_x.shape(), img_y.shape(), "encode_pair");
    const auto sx = backbone.forward(img_x, training);
    const auto sy = backbone.forward(img_y, training);

    FeaturePyramidPair<T> out;
    auto top_x = reduce5.forward(sx[4], training);
    auto top_y = reduce5.forward(sy[4], training);
    auto [cx5, cy5] = channel_swap(top_x, top_y, cfg.swap_ratio,
                                   cfg.swap_layout);
    out.fx[4] = cx5;
    out.fy[4] = cy5;

    for (int level = 4; level >= 1; --level) {
      const auto& stage_x = sx[static_cast<size_t>(level - 1)];
      const auto& stage_y = sy[static_cast<size_t>(level - 1)];
      const Shape ss = stage_x.shape();
      auto up_x = upsample_bilinear(out.fx[static_cast<size_t>(level)], ss.h,
                                    ss.w, cfg.align_corners);
      auto up_y = upsample_bilinear(out.fy[static_cast<size_t>(level)], ss.h,
                                    ss.w, cfg.align_corners);
      const auto& stack = lateral[static_cast<size_t>(4 - level)];
      auto fx = stack.forward(concat_channels<T>({stage_x, up_x}), training);
      auto fy = stack.forward(concat_channels<T>({stage_y, up_y}), training);
      auto [cx, cy] = channel_swap(fx, fy, cfg.swap_ratio, cfg.swap_layout);
      out.fx[static_cast<size_t>(level - 1)] = cx;
      out.fy[static_cast<size_t>(level - 1)] = cy;
    }
    return out;
  }
};

}  // namespace cebsnet
