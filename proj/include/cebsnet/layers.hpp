#pragma once

// Parameterized building blocks: convolution layers with optional
// normalization + ReLU, and the named parameter store that checkpointing
// and the gradient audit walk.

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cebsnet/ops.hpp"
#include "cebsnet/rng.hpp"
#include "cebsnet/tensor.hpp"

namespace cebsnet {

struct ConvSpec {
  i64 kernel = 3;
  i64 in_ch = 0;
  i64 out_ch = 0;
  i64 stride = 1;
  i64 padding = 0;  // (kernel-1)/2 for size-preserving layers
  bool has_norm = true;
  bool has_activation = true;
  // Normalization cancels any constant shift, so norm-bearing convolutions
  // carry no bias parameter (it would never receive gradient).
  bool has_bias = false;

  static ConvSpec same(i64 in_ch, i64 out_ch, i64 kernel, bool norm = true,
                       bool act = true) {
    return ConvSpec{kernel, in_ch, out_ch, 1, (kernel - 1) / 2,
                    norm,   act,   !norm};
  }
  static ConvSpec linear1x1(i64 in_ch, i64 out_ch, bool bias = true) {
    return ConvSpec{1, in_ch, out_ch, 1, 0, false, false, bias};
  }

  void validate() const {
    check(kernel >= 1 && kernel % 2 == 1,
          "conv spec: kernel must be odd positive, got " +
              std::to_string(kernel));
    check(in_ch >= 1 && out_ch >= 1, "conv spec: channel extents must be >= 1");
    check(stride >= 1, "conv spec: stride must be >= 1");
    check(padding >= 0, "conv spec: padding must be >= 0");
  }
};

// Ordered name -> tensor registry. Parameters are learnable; buffers
// receive no gradients but persist in checkpoints (none currently in use).
template <typename T>
class ParamStore {
 public:
  Tensor<T> add_param(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
  }
  Tensor<T> add_buffer(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(false);
    buffers_.emplace_back(name, t);
    return t;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& params() const {
    return params_;
  }
  const std::vector<std::pair<std::string, Tensor<T>>>& buffers() const {
    return buffers_;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  i64 param_count() const {
    i64 n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, Tensor<T>>> buffers_;
};

// Per-sample, per-channel normalization over the spatial extent (biased
// variance). Training and evaluation compute the same function, so scores
// never depend on batch composition. Desk-scale note: per-batch statistics
// were measured to be unusable at inference here (frozen population or
// fixed-point statistics collapse eval F1), so the norm is per-sample by
// design.
template <typename T>
struct InstanceNorm {
  Tensor<T> gamma, beta;
  T eps = static_cast<T>(1e-5);

  void init(ParamStore<T>& ps, const std::string& prefix, i64 channels) {
    gamma = ps.add_param(prefix + ".norm.g",
                         Tensor<T>::filled({1, channels, 1, 1}, T(1)));
    beta = ps.add_param(prefix + ".norm.b",
                        Tensor<T>::zeros({1, channels, 1, 1}));
  }

  Tensor<T> forward(const Tensor<T>& x, bool /*training*/) const {
    const Shape s = x.shape();
    check(s.c == gamma.shape().c, "norm: channel extent " +
                                      std::to_string(s.c) + " != " +
                                      std::to_string(gamma.shape().c));
    const i64 plane = s.h * s.w;
    check(plane >= 1, "norm: empty input");
    const i64 groups = s.n * s.c;
    auto out = detail::make_node<T>(s, {x.node(), gamma.node(), beta.node()});
    const T* px = x.values().data();
    const T* pg = gamma.values().data();
    const T* pb = beta.values().data();
    T* po = out->values.data();
    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
    auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
    for (i64 g = 0; g < groups; ++g) {
      const T* xp = px + g * plane;
      double m = 0;
      for (i64 i = 0; i < plane; ++i) m += xp[i];
      m /= static_cast<double>(plane);
      double v = 0;
      for (i64 i = 0; i < plane; ++i) {
        const double d = static_cast<double>(xp[i]) - m;
        v += d * d;
      }
      v /= static_cast<double>(plane);
      (*mean)[static_cast<size_t>(g)] = static_cast<T>(m);
      (*inv)[static_cast<size_t>(g)] =
          static_cast<T>(1.0 / std::sqrt(v + static_cast<double>(eps)));
    }
    for (i64 n = 0; n < s.n; ++n) {
      for (i64 c = 0; c < s.c; ++c) {
        const i64 g = n * s.c + c;
        const T a = pg[c] * (*inv)[static_cast<size_t>(g)];
        const T b = pb[c] - (*mean)[static_cast<size_t>(g)] * a;
        const T* xp = px + g * plane;
        T* op = po + g * plane;
        for (i64 i = 0; i < plane; ++i) op[i] = a * xp[i] + b;
      }
    }
    detail::assert_finite(out->values, "norm");
    if (out->requires_grad) {
      auto xn = x.node();
      auto gn = gamma.node();
      auto bn = beta.node();
      auto* o = out.get();
      out->backward = [o, xn, gn, bn, mean, inv, s, plane]() {
        const T* g = o->grad.data();
        const T* px = xn->values.data();
        const T* pg = gn->values.data();
        for (i64 n = 0; n < s.n; ++n) {
          for (i64 c = 0; c < s.c; ++c) {
            const i64 grp = n * s.c + c;
            const T m = (*mean)[static_cast<size_t>(grp)];
            const T iv = (*inv)[static_cast<size_t>(grp)];
            const T* gp = g + grp * plane;
            const T* xp = px + grp * plane;
            double sg = 0, sgx = 0;
            for (i64 i = 0; i < plane; ++i) {
              const double xh = (xp[i] - m) * iv;
              sg += gp[i];
              sgx += gp[i] * xh;
            }
            if (gn->requires_grad) {
              gn->grad[static_cast<size_t>(c)] += static_cast<T>(sgx);
            }
            if (bn->requires_grad) {
              bn->grad[static_cast<size_t>(c)] += static_cast<T>(sg);
            }
            if (xn->requires_grad) {
              const T a = pg[c] * iv;
              const T mg = static_cast<T>(sg / static_cast<double>(plane));
              const T mgx = static_cast<T>(sgx / static_cast<double>(plane));
              T* gx = xn->grad.data() + grp * plane;
              for (i64 i = 0; i < plane; ++i) {
                const T xh = (xp[i] - m) * iv;
                gx[i] += a * (gp[i] - mg - xh * mgx);
              }
            }
          }
        }
      };
    }
    return Tensor<T>(std::move(out));
  }
};


// Kaiming fan-in normal for conv weights, zero bias.
template <typename T>
Tensor<T> kaiming_conv_weight(Rng& rng, i64 out_ch, i64 in_ch, i64 kernel) {
  const double fan_in = static_cast<double>(in_ch * kernel * kernel);
  const double stdev = std::sqrt(2.0 / fan_in);
  std::vector<T> vals(static_cast<size_t>(out_ch * in_ch * kernel * kernel));
  for (auto& v : vals) v = static_cast<T>(rand_normal(rng) * stdev);
  return Tensor<T>::from_values({out_ch, in_ch, kernel, kernel},
                                std::move(vals));
}

template <typename T>
struct Conv2dLayer {
  ConvSpec spec;
  Tensor<T> weight, bias;
  InstanceNorm<T> norm;

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
            ConvSpec sp) {
    sp.validate();
    spec = sp;
    weight = ps.add_param(
        prefix + ".w",
        kaiming_conv_weight<T>(rng, sp.out_ch, sp.in_ch, sp.kernel));
    if (sp.has_bias) {
      bias = ps.add_param(prefix + ".b",
                          Tensor<T>::zeros({1, sp.out_ch, 1, 1}));
    } else {
      bias = Tensor<T>::zeros({1, sp.out_ch, 1, 1});
    }
    if (sp.has_norm) norm.init(ps, prefix, sp.out_ch);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) const {
    Tensor<T> y = conv2d(x, weight, bias, spec.stride, spec.padding);
    if (spec.has_norm) y = norm.forward(y, training);
    if (spec.has_activation) y = relu(y);
    return y;
  }
};

// A sequential stack of convolutions ("Conv_n" style): kernels given per
// layer, every layer norm+ReLU except optionally the last.
template <typename T>
struct ConvStack {
  std::vector<Conv2dLayer<T>> layers;

  void init(ParamStore<T>& ps, Rng& rng, const std::string& prefix, i64 in_ch,
            i64 out_ch, const std::vector<i64>& kernels,
            bool linear_last = false) {
    layers.resize(kernels.size());
    i64 cin = in_ch;
    for (size_t i = 0; i < kernels.size(); ++i) {
      const bool last = (i + 1 == kernels.size());
      const bool lin = last && linear_last;
      layers[i].init(ps, rng, prefix + ".conv" + std::to_string(i),
                     ConvSpec::same(cin, out_ch, kernels[i], !lin, !lin));
      cin = out_ch;
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) const {
    Tensor<T> y = x;
    for (const auto& l : layers) y = l.forward(y, training);
    return y;
  }
};

// Scalar parameter (gate coefficients).
template <typename T>
Tensor<T> scalar_param(ParamStore<T>& ps, const std::string& name, T value) {
  return ps.add_param(name, Tensor<T>::scalar(value));
}

}  // namespace cebsnet
