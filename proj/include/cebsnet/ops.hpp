#pragma once

// Differentiable operations over rank-4 tensors. Forward semantics and exact
// analytic gradients; every op here is covered by the finite-difference
// registry in gradcheck.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cebsnet/tensor.hpp"

namespace cebsnet {

// Toggle for the post-op finiteness scan (NaN/Inf is an error state).
namespace detail {
inline bool& finite_checks_flag() {
  static bool enabled = true;
  return enabled;
}
}  // namespace detail
inline void set_finite_checks(bool on) { detail::finite_checks_flag() = on; }

namespace detail {

template <typename T>
void assert_finite(const std::vector<T>& v, const char* op) {
  if (!finite_checks_flag()) return;
  double acc = 0.0;
  for (T x : v) acc += std::fabs(static_cast<double>(x));
  if (!std::isfinite(acc)) {
    throw ContractError(std::string(op) + ": non-finite value (NaN/Inf)");
  }
}

// --- dense kernels -----------------------------------------------------

// C[m x n] += A[m x k] * B[k x n], row-major.
template <typename T>
void gemm_nn(i64 m, i64 n, i64 k, const T* a, const T* b, T* c) {
  i64 i = 0;
  for (; i + 4 <= m; i += 4) {
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    T* c2 = c + (i + 2) * n;
    T* c3 = c + (i + 3) * n;
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    const T* a2 = a + (i + 2) * k;
    const T* a3 = a + (i + 3) * k;
    for (i64 p = 0; p < k; ++p) {
      const T v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      const T* bp = b + p * n;
      for (i64 j = 0; j < n; ++j) {
        const T bj = bp[j];
        c0[j] += v0 * bj;
        c1[j] += v1 * bj;
        c2[j] += v2 * bj;
        c3[j] += v3 * bj;
      }
    }
  }
  for (; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (i64 p = 0; p < k; ++p) {
      const T v = ai[p];
      const T* bp = b + p * n;
      for (i64 j = 0; j < n; ++j) ci[j] += v * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, where B is n x k row-major. The dot reductions
// need reassociation to vectorize; the simd pragma grants it.
template <typename T>
void gemm_nt(i64 m, i64 n, i64 k, const T* a, const T* b, T* c) {
  i64 i = 0;
  for (; i + 2 <= m; i += 2) {
    const T* a0 = a + (i + 0) * k;
    const T* a1 = a + (i + 1) * k;
    T* c0 = c + (i + 0) * n;
    T* c1 = c + (i + 1) * n;
    i64 j = 0;
    for (; j + 2 <= n; j += 2) {
      const T* b0 = b + (j + 0) * k;
      const T* b1 = b + (j + 1) * k;
      T s00 = 0, s01 = 0, s10 = 0, s11 = 0;
#pragma omp simd reduction(+ : s00, s01, s10, s11)
      for (i64 p = 0; p < k; ++p) {
        s00 += a0[p] * b0[p];
        s01 += a0[p] * b1[p];
        s10 += a1[p] * b0[p];
        s11 += a1[p] * b1[p];
      }
      c0[j + 0] += s00;
      c0[j + 1] += s01;
      c1[j + 0] += s10;
      c1[j + 1] += s11;
    }
    for (; j < n; ++j) {
      const T* bj = b + j * k;
      T s0 = 0, s1 = 0;
#pragma omp simd reduction(+ : s0, s1)
      for (i64 p = 0; p < k; ++p) {
        s0 += a0[p] * bj[p];
        s1 += a1[p] * bj[p];
      }
      c0[j] += s0;
      c1[j] += s1;
    }
  }
  for (; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (i64 j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T s = 0;
#pragma omp simd reduction(+ : s)
      for (i64 p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

// C[m x n] += A^T * B, where A is k x m row-major and B is k x n row-major.
// Rows of C stay resident while p sweeps, so C is written once.
template <typename T>
void gemm_tn(i64 m, i64 n, i64 k, const T* a, const T* b, T* c) {
  for (i64 i = 0; i < m; ++i) {
    T* ci = c + i * n;
    i64 p = 0;
    for (; p + 4 <= k; p += 4) {
      const T v0 = a[(p + 0) * m + i];
      const T v1 = a[(p + 1) * m + i];
      const T v2 = a[(p + 2) * m + i];
      const T v3 = a[(p + 3) * m + i];
      const T* b0 = b + (p + 0) * n;
      const T* b1 = b + (p + 1) * n;
      const T* b2 = b + (p + 2) * n;
      const T* b3 = b + (p + 3) * n;
      for (i64 j = 0; j < n; ++j) {
        ci[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
      }
    }
    for (; p < k; ++p) {
      const T v = a[p * m + i];
      const T* bp = b + p * n;
      for (i64 j = 0; j < n; ++j) ci[j] += v * bp[j];
    }
  }
}

// Grow-only per-thread scratch to keep large conv buffers off the allocator.
template <typename T>
T* scratch_buffer(int slot, size_t n) {
  thread_local std::vector<T> bufs[3];
  auto& b = bufs[slot];
  if (b.size() < n) b.resize(n);
  return b.data();
}

inline i64 conv_out_extent(i64 in, i64 kernel, i64 stride, i64 pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// col is [ci*k*k rows][oh*ow cols]; zero-padding handled by bounds.
template <typename T>
void im2col(const T* x, i64 ci, i64 h, i64 w, i64 k, i64 stride, i64 pad,
            i64 oh, i64 ow, T* col) {
  for (i64 c = 0; c < ci; ++c) {
    const T* xc = x + c * h * w;
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * oh * ow;
        for (i64 oy = 0; oy < oh; ++oy) {
          const i64 iy = oy * stride - pad + ky;
          T* dst = row + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = xc + iy * w;
          if (stride == 1) {
            const i64 off = kx - pad;
            i64 lo = std::max<i64>(0, -off);
            i64 hi = std::min<i64>(ow, w - off);
            if (lo > 0) std::fill(dst, dst + lo, T(0));
            if (hi < ow) std::fill(dst + std::max<i64>(lo, hi), dst + ow, T(0));
            for (i64 ox = lo; ox < hi; ++ox) dst[ox] = src[ox + off];
          } else {
            for (i64 ox = 0; ox < ow; ++ox) {
              const i64 ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const T* col, i64 ci, i64 h, i64 w, i64 k, i64 stride, i64 pad,
            i64 oh, i64 ow, T* x) {
  for (i64 c = 0; c < ci; ++c) {
    T* xc = x + c * h * w;
    for (i64 ky = 0; ky < k; ++ky) {
      for (i64 kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * oh * ow;
        for (i64 oy = 0; oy < oh; ++oy) {
          const i64 iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + oy * ow;
          T* dst = xc + iy * w;
          for (i64 ox = 0; ox < ow; ++ox) {
            const i64 ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <class F>
void parallel_for(i64 begin, i64 end, F f) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (i64 i = begin; i < end; ++i) f(i);
#else
  for (i64 i = begin; i < end; ++i) f(i);
#endif
}

// Broadcast machinery: each extent must equal the output extent or 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out;
  i64* o[4] = {&out.n, &out.c, &out.h, &out.w};
  for (int d = 0; d < 4; ++d) {
    i64 ea = a[d], eb = b[d];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ContractError(std::string(op) + ": incompatible shapes " +
                          a.str() + " vs " + b.str() + " at axis " +
                          std::to_string(d));
    }
    *o[d] = std::max(ea, eb);
  }
  return out;
}

inline std::array<i64, 4> strides_of(const Shape& s) {
  return {s.c * s.h * s.w, s.h * s.w, s.w, 1};
}

inline std::array<i64, 4> broadcast_strides(const Shape& s,
                                            const Shape& out) {
  auto st = strides_of(s);
  for (int d = 0; d < 4; ++d) {
    if (s[d] == 1 && out[d] != 1) st[static_cast<size_t>(d)] = 0;
  }
  return st;
}

// Visits every output index with the matching (possibly broadcast) input
// offsets. f(i_out, i_a, i_b).
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b,
                        F f) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  i64 io = 0;
  for (i64 n = 0; n < out.n; ++n) {
    for (i64 c = 0; c < out.c; ++c) {
      for (i64 y = 0; y < out.h; ++y) {
        i64 ia = n * sa[0] + c * sa[1] + y * sa[2];
        i64 ib = n * sb[0] + c * sb[1] + y * sb[2];
        for (i64 x = 0; x < out.w; ++x, ++io) {
          f(io, ia + x * sa[3], ib + x * sb[3]);
        }
      }
    }
  }
}

// f(base, stride, len) per line along `axis`.
template <class F>
void for_each_line(const Shape& s, int axis, F f) {
  const auto st = strides_of(s);
  const i64 len = s[axis];
  const i64 stride = st[static_cast<size_t>(axis)];
  i64 ext[3];
  i64 str[3];
  int j = 0;
  for (int d = 0; d < 4; ++d) {
    if (d == axis) continue;
    ext[j] = s[d];
    str[j] = st[static_cast<size_t>(d)];
    ++j;
  }
  for (i64 i0 = 0; i0 < ext[0]; ++i0) {
    for (i64 i1 = 0; i1 < ext[1]; ++i1) {
      for (i64 i2 = 0; i2 < ext[2]; ++i2) {
        f(i0 * str[0] + i1 * str[1] + i2 * str[2], stride, len);
      }
    }
  }
}

}  // namespace detail

// Strip/region partition along one extent: k pieces, floor-sized, remainder
// absorbed by the last piece. Concatenation of pieces reconstructs the input.
inline std::vector<std::pair<i64, i64>> partition_bounds(i64 extent, i64 k) {
  check(k >= 1, "partition: k must be >= 1, got " + std::to_string(k));
  check(k <= extent, "partition: k=" + std::to_string(k) +
                         " exceeds extent " + std::to_string(extent));
  std::vector<std::pair<i64, i64>> out(static_cast<size_t>(k));
  const i64 base = extent / k;
  for (i64 m = 0; m < k; ++m) {
    out[static_cast<size_t>(m)] = {m * base,
                                   (m == k - 1) ? extent : (m + 1) * base};
  }
  return out;
}

// --- elementwise -------------------------------------------------------

namespace detail {

template <typename T, class Fwd, class Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                    Fwd fwd, Bwd bwd) {
  const Shape os = broadcast_shape(a.shape(), b.shape(), name);
  const bool flat = a.shape() == b.shape();
  auto out = make_node<T>(os, {a.node(), b.node()});
  {
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* po = out->values.data();
    if (flat) {
      const i64 n = os.numel();
      for (i64 i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    } else {
      for_each_broadcast(os, a.shape(), b.shape(), [&](i64 io, i64 ia, i64 ib) {
        po[io] = fwd(pa[ia], pb[ib]);
      });
    }
  }
  assert_finite(out->values, name);
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    auto* o = out.get();
    Shape as = a.shape(), bs = b.shape();
    out->backward = [o, an, bn, as, bs, os, flat, bwd]() {
      const T* pa = an->values.data();
      const T* pb = bn->values.data();
      const T* g = o->grad.data();
      T* ga = an->requires_grad ? an->grad.data() : nullptr;
      T* gb = bn->requires_grad ? bn->grad.data() : nullptr;
      if (flat) {
        const i64 n = os.numel();
        for (i64 i = 0; i < n; ++i) {
          T da, db;
          bwd(pa[i], pb[i], g[i], da, db);
          if (ga) ga[i] += da;
          if (gb) gb[i] += db;
        }
      } else {
        for_each_broadcast(os, as, bs, [&](i64 io, i64 ia, i64 ib) {
          T da, db;
          bwd(pa[ia], pb[ib], g[io], da, db);
          if (ga) ga[ia] += da;
          if (gb) gb[ib] += db;
        });
      }
    };
  }
  return Tensor<T>(std::move(out));
}

template <typename T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Bwd bwd) {
  auto out = make_node<T>(x.shape(), {x.node()});
  const T* px = x.values().data();
  T* po = out->values.data();
  const size_t n = x.values().size();
  for (size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  assert_finite(out->values, name);
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    out->backward = [o, xn, bwd]() {
      const T* px = xn->values.data();
      const T* py = o->values.data();
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      const size_t n = xn->values.size();
      for (size_t i = 0; i < n; ++i) gx[i] += bwd(px[i], py[i], g[i]);
    };
  }
  return Tensor<T>(std::move(out));
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = g;
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; },
      [](T, T, T g, T& da, T& db) {
        da = g;
        db = -g;
      });
}

template <typename T>
Tensor<T> mul_elementwise(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; },
      [](T x, T y, T g, T& da, T& db) {
        da = g * y;
        db = g * x;
      });
}

template <typename T>
Tensor<T> abs_elementwise(const Tensor<T>& x) {
  return detail::unary_op<T>(
      x, "abs", [](T v) { return std::fabs(v); },
      [](T v, T, T g) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      x, "sigmoid",
      [](T v) {
        return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                         : std::exp(v) / (T(1) + std::exp(v));
      },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op<T>(
      x, "relu", [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

// a*x + b with scalar constants.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  return detail::unary_op<T>(
      x, "affine", [a, b](T v) { return a * v + b; },
      [a](T, T, T g) { return a * g; });
}

// --- reductions and normalizers ----------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  check(axis >= 0 && axis < 4,
        "softmax: axis " + std::to_string(axis) + " out of range");
  auto out = detail::make_node<T>(x.shape(), {x.node()});
  const T* px = x.values().data();
  T* po = out->values.data();
  detail::for_each_line(x.shape(), axis, [&](i64 base, i64 stride, i64 len) {
    T mx = px[base];
    for (i64 i = 1; i < len; ++i) mx = std::max(mx, px[base + i * stride]);
    T sum = 0;
    for (i64 i = 0; i < len; ++i) {
      const T e = std::exp(px[base + i * stride] - mx);
      po[base + i * stride] = e;
      sum += e;
    }
    const T inv = T(1) / sum;
    for (i64 i = 0; i < len; ++i) po[base + i * stride] *= inv;
  });
  detail::assert_finite(out->values, "softmax");
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    Shape s = x.shape();
    out->backward = [o, xn, s, axis]() {
      const T* py = o->values.data();
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      detail::for_each_line(s, axis, [&](i64 base, i64 stride, i64 len) {
        T dot = 0;
        for (i64 i = 0; i < len; ++i) {
          const i64 k = base + i * stride;
          dot += g[k] * py[k];
        }
        for (i64 i = 0; i < len; ++i) {
          const i64 k = base + i * stride;
          gx[k] += py[k] * (g[k] - dot);
        }
      });
    };
  }
  return Tensor<T>(std::move(out));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Shape s = x.shape();
  auto out = detail::make_node<T>({s.n, s.c, 1, 1}, {x.node()});
  const i64 plane = s.h * s.w;
  const T inv = T(1) / static_cast<T>(plane);
  const T* px = x.values().data();
  T* po = out->values.data();
  for (i64 p = 0; p < s.n * s.c; ++p) {
    T acc = 0;
    const T* xp = px + p * plane;
    for (i64 i = 0; i < plane; ++i) acc += xp[i];
    po[p] = acc * inv;
  }
  detail::assert_finite(out->values, "global_avg_pool");
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    out->backward = [o, xn, plane, inv]() {
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      const i64 planes = static_cast<i64>(o->values.size());
      for (i64 p = 0; p < planes; ++p) {
        const T gv = g[p] * inv;
        T* dst = gx + p * plane;
        for (i64 i = 0; i < plane; ++i) dst[i] += gv;
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// Scalar objective sum(w_i * x_i); the gradcheck harness uses it to reduce an
// arbitrary output to a scalar with a fixed random covector.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights) {
  check(static_cast<i64>(weights.size()) == x.numel(),
        "weighted_sum: weight count mismatch");
  auto out = detail::make_node<T>({1, 1, 1, 1}, {x.node()});
  const T* px = x.values().data();
  double acc = 0;
  for (size_t i = 0; i < weights.size(); ++i) {
    acc += static_cast<double>(px[i]) * static_cast<double>(weights[i]);
  }
  out->values[0] = static_cast<T>(acc);
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    auto w = std::make_shared<std::vector<T>>(std::move(weights));
    out->backward = [o, xn, w]() {
      const T g = o->grad[0];
      T* gx = xn->grad.data();
      for (size_t i = 0; i < w->size(); ++i) gx[i] += g * (*w)[i];
    };
  }
  return Tensor<T>(std::move(out));
}

// --- shape ops ----------------------------------------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  check(!xs.empty(), "concat: no inputs");
  const Shape s0 = xs[0].shape();
  i64 ctot = 0;
  for (const auto& x : xs) {
    const Shape s = x.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w) {
      throw ContractError("concat: extent mismatch on non-channel axes " +
                          s.str() + " vs " + s0.str());
    }
    ctot += s.c;
  }
  std::vector<typename Tensor<T>::NodePtr> parents;
  parents.reserve(xs.size());
  for (const auto& x : xs) parents.push_back(x.node());
  auto out = detail::make_node<T>({s0.n, ctot, s0.h, s0.w}, parents);
  const i64 plane = s0.h * s0.w;
  T* po = out->values.data();
  for (i64 n = 0; n < s0.n; ++n) {
    i64 coff = 0;
    for (const auto& x : xs) {
      const i64 xc = x.shape().c;
      const T* src = x.values().data() + n * xc * plane;
      std::memcpy(po + (n * ctot + coff) * plane, src,
                  sizeof(T) * static_cast<size_t>(xc * plane));
      coff += xc;
    }
  }
  if (out->requires_grad) {
    auto* o = out.get();
    std::vector<typename Tensor<T>::NodePtr> ins = parents;
    out->backward = [o, ins, s0, ctot, plane]() {
      const T* g = o->grad.data();
      for (i64 n = 0; n < s0.n; ++n) {
        i64 coff = 0;
        for (const auto& in : ins) {
          const i64 xc = in->shape.c;
          if (in->requires_grad) {
            T* gx = in->grad.data() + n * xc * plane;
            const T* gs = g + (n * ctot + coff) * plane;
            for (i64 i = 0; i < xc * plane; ++i) gx[i] += gs[i];
          }
          coff += xc;
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, i64 c0, i64 len) {
  const Shape s = x.shape();
  check(c0 >= 0 && len >= 0 && c0 + len <= s.c,
        "slice: channel range [" + std::to_string(c0) + "," +
            std::to_string(c0 + len) + ") exceeds extent " +
            std::to_string(s.c));
  auto out = detail::make_node<T>({s.n, len, s.h, s.w}, {x.node()});
  const i64 plane = s.h * s.w;
  T* po = out->values.data();
  const T* px = x.values().data();
  for (i64 n = 0; n < s.n; ++n) {
    std::memcpy(po + n * len * plane, px + (n * s.c + c0) * plane,
                sizeof(T) * static_cast<size_t>(len * plane));
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    out->backward = [o, xn, s, c0, len, plane]() {
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        T* dst = gx + (n * s.c + c0) * plane;
        const T* src = g + n * len * plane;
        for (i64 i = 0; i < len * plane; ++i) dst[i] += src[i];
      }
    };
  }
  return Tensor<T>(std::move(out));
}

template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& x,
                                      const std::vector<i64>& sizes) {
  i64 sum = 0;
  for (i64 s : sizes) sum += s;
  check(sum == x.shape().c, "split: sizes sum to " + std::to_string(sum) +
                                ", channel extent is " +
                                std::to_string(x.shape().c));
  std::vector<Tensor<T>> out;
  out.reserve(sizes.size());
  i64 c0 = 0;
  for (i64 s : sizes) {
    out.push_back(slice_channels(x, c0, s));
    c0 += s;
  }
  return out;
}

// out[ch] = take_other[ch] ? other[ch] : x[ch]. Two mirrored calls implement
// a parameter-free channel exchange between a tensor pair.
template <typename T>
Tensor<T> channel_mix(const Tensor<T>& x, const Tensor<T>& other,
                      const std::vector<std::uint8_t>& take_other) {
  check_same_shape(x.shape(), other.shape(), "channel_mix");
  const Shape s = x.shape();
  check(static_cast<i64>(take_other.size()) == s.c,
        "channel_mix: mask length mismatch");
  auto out = detail::make_node<T>(s, {x.node(), other.node()});
  const i64 plane = s.h * s.w;
  T* po = out->values.data();
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const auto& src =
          take_other[static_cast<size_t>(c)] ? other.values() : x.values();
      std::memcpy(po + (n * s.c + c) * plane,
                  src.data() + (n * s.c + c) * plane,
                  sizeof(T) * static_cast<size_t>(plane));
    }
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto on = other.node();
    auto* o = out.get();
    auto mask = std::make_shared<std::vector<std::uint8_t>>(take_other);
    out->backward = [o, xn, on, mask, s, plane]() {
      const T* g = o->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        for (i64 c = 0; c < s.c; ++c) {
          auto* dst = (*mask)[static_cast<size_t>(c)] ? on.get() : xn.get();
          if (!dst->requires_grad) continue;
          T* gd = dst->grad.data() + (n * s.c + c) * plane;
          const T* gs = g + (n * s.c + c) * plane;
          for (i64 i = 0; i < plane; ++i) gd[i] += gs[i];
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// --- spatial ops ---------------------------------------------------------

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, i64 kernel, i64 stride, i64 pad) {
  const Shape s = x.shape();
  check(kernel >= 1, "maxpool: kernel must be >= 1");
  check(stride >= 1, "maxpool: stride must be >= 1");
  check(pad >= 0 && pad <= kernel / 2,
        "maxpool: padding " + std::to_string(pad) +
            " must be in [0, kernel/2]");
  check(kernel <= s.h + 2 * pad && kernel <= s.w + 2 * pad,
        "maxpool: window " + std::to_string(kernel) +
            " larger than padded input " + s.str());
  const i64 oh = detail::conv_out_extent(s.h, kernel, stride, pad);
  const i64 ow = detail::conv_out_extent(s.w, kernel, stride, pad);
  check(oh >= 1 && ow >= 1, "maxpool: empty output for input " + s.str());
  auto out = detail::make_node<T>({s.n, s.c, oh, ow}, {x.node()});
  auto argmax = std::make_shared<std::vector<i64>>(out->values.size());
  const T* px = x.values().data();
  T* po = out->values.data();
  i64* pam = argmax->data();
  const i64 planes = s.n * s.c;
  detail::parallel_for(0, planes, [&](i64 p) {
    const T* xp = px + p * s.h * s.w;
    T* op = po + p * oh * ow;
    i64* ap = pam + p * oh * ow;
    for (i64 oy = 0; oy < oh; ++oy) {
      for (i64 ox = 0; ox < ow; ++ox) {
        const i64 y0 = oy * stride - pad;
        const i64 x0 = ox * stride - pad;
        T best = -std::numeric_limits<T>::infinity();
        i64 bi = -1;
        for (i64 ky = std::max<i64>(0, -y0);
             ky < std::min(kernel, s.h - y0); ++ky) {
          for (i64 kx = std::max<i64>(0, -x0);
               kx < std::min(kernel, s.w - x0); ++kx) {
            const i64 idx = (y0 + ky) * s.w + (x0 + kx);
            if (xp[idx] > best) {
              best = xp[idx];
              bi = idx;
            }
          }
        }
        op[oy * ow + ox] = best;
        ap[oy * ow + ox] = bi;
      }
    }
  });
  detail::assert_finite(out->values, "maxpool2d");
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    const i64 iplane = s.h * s.w;
    const i64 oplane = oh * ow;
    out->backward = [o, xn, argmax, planes, iplane, oplane]() {
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      const i64* am = argmax->data();
      for (i64 p = 0; p < planes; ++p) {
        for (i64 i = 0; i < oplane; ++i) {
          gx[p * iplane + am[p * oplane + i]] += g[p * oplane + i];
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

namespace detail {
struct LerpAxis {
  std::vector<i64> i0, i1;
  std::vector<double> f;
};
inline LerpAxis lerp_axis(i64 in, i64 out, bool align_corners) {
  LerpAxis m;
  m.i0.resize(static_cast<size_t>(out));
  m.i1.resize(static_cast<size_t>(out));
  m.f.resize(static_cast<size_t>(out));
  for (i64 o = 0; o < out; ++o) {
    double src;
    if (align_corners) {
      src = (out == 1) ? 0.0
                       : static_cast<double>(o) * (in - 1) / (out - 1);
    } else {
      src = (static_cast<double>(o) + 0.5) * in / out - 0.5;
    }
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    const i64 lo = static_cast<i64>(src);
    m.i0[static_cast<size_t>(o)] = lo;
    m.i1[static_cast<size_t>(o)] = std::min(lo + 1, in - 1);
    m.f[static_cast<size_t>(o)] = src - static_cast<double>(lo);
  }
  return m;
}
}  // namespace detail

template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, i64 out_h, i64 out_w,
                            bool align_corners = false) {
  const Shape s = x.shape();
  check(out_h >= 1 && out_w >= 1, "upsample: target extents must be >= 1");
  auto out = detail::make_node<T>({s.n, s.c, out_h, out_w}, {x.node()});
  const auto my = detail::lerp_axis(s.h, out_h, align_corners);
  const auto mx = detail::lerp_axis(s.w, out_w, align_corners);
  const T* px = x.values().data();
  T* po = out->values.data();
  const i64 planes = s.n * s.c;
  detail::parallel_for(0, planes, [&](i64 p) {
    const T* xp = px + p * s.h * s.w;
    T* op = po + p * out_h * out_w;
    for (i64 oy = 0; oy < out_h; ++oy) {
      const i64 y0 = my.i0[static_cast<size_t>(oy)];
      const i64 y1 = my.i1[static_cast<size_t>(oy)];
      const double fy = my.f[static_cast<size_t>(oy)];
      for (i64 ox = 0; ox < out_w; ++ox) {
        const i64 x0 = mx.i0[static_cast<size_t>(ox)];
        const i64 x1 = mx.i1[static_cast<size_t>(ox)];
        const double fx = mx.f[static_cast<size_t>(ox)];
        const double v =
            (1 - fy) * ((1 - fx) * xp[y0 * s.w + x0] + fx * xp[y0 * s.w + x1]) +
            fy * ((1 - fx) * xp[y1 * s.w + x0] + fx * xp[y1 * s.w + x1]);
        op[oy * out_w + ox] = static_cast<T>(v);
      }
    }
  });
  detail::assert_finite(out->values, "upsample_bilinear");
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    auto myp = std::make_shared<detail::LerpAxis>(my);
    auto mxp = std::make_shared<detail::LerpAxis>(mx);
    out->backward = [o, xn, myp, mxp, s, out_h, out_w]() {
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      const i64 planes = s.n * s.c;
      for (i64 p = 0; p < planes; ++p) {
        const T* gp = g + p * out_h * out_w;
        T* xp = gx + p * s.h * s.w;
        for (i64 oy = 0; oy < out_h; ++oy) {
          const i64 y0 = myp->i0[static_cast<size_t>(oy)];
          const i64 y1 = myp->i1[static_cast<size_t>(oy)];
          const double fy = myp->f[static_cast<size_t>(oy)];
          for (i64 ox = 0; ox < out_w; ++ox) {
            const i64 x0 = mxp->i0[static_cast<size_t>(ox)];
            const i64 x1 = mxp->i1[static_cast<size_t>(ox)];
            const double fx = mxp->f[static_cast<size_t>(ox)];
            const double gv = static_cast<double>(gp[oy * out_w + ox]);
            xp[y0 * s.w + x0] += static_cast<T>((1 - fy) * (1 - fx) * gv);
            xp[y0 * s.w + x1] += static_cast<T>((1 - fy) * fx * gv);
            xp[y1 * s.w + x0] += static_cast<T>(fy * (1 - fx) * gv);
            xp[y1 * s.w + x1] += static_cast<T>(fy * fx * gv);
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, i64 stride, i64 pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(pad >= 0, "conv2d: padding must be >= 0");
  check(ws.h == ws.w, "conv2d: non-square kernel " + ws.str());
  if (xs.c != ws.c) {
    throw ContractError("conv2d: input channel extent " +
                        std::to_string(xs.c) + " != weight in_ch " +
                        std::to_string(ws.c));
  }
  const Shape bs = bias.shape();
  check(bs.n == 1 && bs.c == ws.n && bs.h == 1 && bs.w == 1,
        "conv2d: bias shape " + bs.str() + " must be [1," +
            std::to_string(ws.n) + ",1,1]");
  const i64 k = ws.h;
  const i64 oh = detail::conv_out_extent(xs.h, k, stride, pad);
  const i64 ow = detail::conv_out_extent(xs.w, k, stride, pad);
  check(oh >= 1 && ow >= 1,
        "conv2d: kernel " + std::to_string(k) + " with stride " +
            std::to_string(stride) + " produces empty output for " + xs.str());

  const i64 co = ws.n, ci = ws.c;
  const i64 colrows = ci * k * k;
  const i64 ospatial = oh * ow;
  auto out = detail::make_node<T>({xs.n, co, oh, ow},
                                  {x.node(), weight.node(), bias.node()});
  {
    const T* px = x.values().data();
    const T* pw = weight.values().data();
    const T* pb = bias.values().data();
    T* po = out->values.data();
    int threads = 1;
#ifdef _OPENMP
    threads = omp_get_max_threads();
#endif
    if (xs.n >= threads) {
      detail::parallel_for(0, xs.n, [&](i64 n) {
        T* col = detail::scratch_buffer<T>(0,
                                           static_cast<size_t>(colrows * ospatial));
        detail::im2col(px + n * ci * xs.h * xs.w, ci, xs.h, xs.w, k, stride,
                       pad, oh, ow, col);
        T* on = po + n * co * ospatial;
        for (i64 o = 0; o < co; ++o) {
          std::fill(on + o * ospatial, on + (o + 1) * ospatial, pb[o]);
        }
        detail::gemm_nn(co, ospatial, colrows, pw, col, on);
      });
    } else {
      // Small batch: split output-channel rows across threads instead.
      T* col =
          detail::scratch_buffer<T>(0, static_cast<size_t>(colrows * ospatial));
      const i64 nblocks = (co + 7) / 8;
      for (i64 n = 0; n < xs.n; ++n) {
        detail::im2col(px + n * ci * xs.h * xs.w, ci, xs.h, xs.w, k, stride,
                       pad, oh, ow, col);
        T* on = po + n * co * ospatial;
        detail::parallel_for(0, nblocks, [&](i64 blk) {
          const i64 r0 = blk * 8;
          const i64 rows = std::min<i64>(8, co - r0);
          for (i64 o = r0; o < r0 + rows; ++o) {
            std::fill(on + o * ospatial, on + (o + 1) * ospatial, pb[o]);
          }
          detail::gemm_nn(rows, ospatial, colrows, pw + r0 * colrows, col,
                          on + r0 * ospatial);
        });
      }
    }
  }
  detail::assert_finite(out->values, "conv2d");
  if (out->requires_grad) {
    auto xn = x.node();
    auto wn = weight.node();
    auto bn = bias.node();
    auto* o = out.get();
    out->backward = [o, xn, wn, bn, xs, ws, stride, pad, oh, ow]() {
      const i64 k = ws.h, co = ws.n, ci = ws.c;
      const i64 colrows = ci * k * k;
      const i64 ospatial = oh * ow;
      const T* g = o->grad.data();
      if (bn->requires_grad) {
        T* gb = bn->grad.data();
        for (i64 n = 0; n < xs.n; ++n) {
          for (i64 c = 0; c < co; ++c) {
            const T* gp = g + (n * co + c) * ospatial;
            T acc = 0;
            for (i64 i = 0; i < ospatial; ++i) acc += gp[i];
            gb[c] += acc;
          }
        }
      }
      const bool need_w = wn->requires_grad;
      const bool need_x = xn->requires_grad;
      if (!need_w && !need_x) return;
      const T* px = xn->values.data();
      const T* pw = wn->values.data();
      // Per-item col buffers (recomputed, not cached from forward); the
      // weight gradient then parallelizes over disjoint row blocks. The tape
      // runs backward on one thread, so a shared scratch arena is safe.
      const size_t colsz = static_cast<size_t>(colrows * ospatial);
      T* cols = need_w ? detail::scratch_buffer<T>(
                             1, colsz * static_cast<size_t>(xs.n))
                       : nullptr;
      detail::parallel_for(0, xs.n, [&](i64 n) {
        if (need_w) {
          detail::im2col(px + n * ci * xs.h * xs.w, ci, xs.h, xs.w, k,
                         stride, pad, oh, ow,
                         cols + static_cast<size_t>(n) * colsz);
        }
        if (need_x) {
          T* gcol = detail::scratch_buffer<T>(2, colsz);
          std::fill(gcol, gcol + colsz, T(0));
          detail::gemm_tn(colrows, ospatial, co, pw,
                          g + n * co * ospatial, gcol);
          detail::col2im(gcol, ci, xs.h, xs.w, k, stride, pad, oh, ow,
                         xn->grad.data() + n * ci * xs.h * xs.w);
        }
      });
      if (need_w) {
        T* gw = wn->grad.data();
        const i64 nblocks = (co + 7) / 8;
        detail::parallel_for(0, nblocks, [&](i64 blk) {
          const i64 r0 = blk * 8;
          const i64 rows = std::min<i64>(8, co - r0);
          for (i64 n = 0; n < xs.n; ++n) {
            detail::gemm_nt(rows, colrows, ospatial,
                            g + (n * co + r0) * ospatial,
                            cols + static_cast<size_t>(n) * colsz,
                            gw + r0 * colrows);
          }
        });
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// Batched matrix product over the two leading extents; (h,w) are the matrix
// dims. transpose flags apply per matrix.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false,
                 bool tb = false) {
  const Shape as = a.shape(), bs = b.shape();
  check(as.n == bs.n && as.c == bs.c,
        "matmul: batch extents differ " + as.str() + " vs " + bs.str());
  const i64 m = ta ? as.w : as.h;
  const i64 ka = ta ? as.h : as.w;
  const i64 kb = tb ? bs.w : bs.h;
  const i64 nn = tb ? bs.h : bs.w;
  check(ka == kb, "matmul: inner extents differ " + std::to_string(ka) +
                      " vs " + std::to_string(kb));
  auto out = detail::make_node<T>({as.n, as.c, m, nn}, {a.node(), b.node()});
  const i64 batch = as.n * as.c;
  const T* pa = a.values().data();
  const T* pb = b.values().data();
  T* po = out->values.data();
  std::fill(out->values.begin(), out->values.end(), T(0));
  const i64 asz = as.h * as.w, bsz = bs.h * bs.w, osz = m * nn;
  detail::parallel_for(0, batch, [&](i64 i) {
    const T* ai = pa + i * asz;
    const T* bi = pb + i * bsz;
    T* oi = po + i * osz;
    if (!ta && !tb) {
      detail::gemm_nn(m, nn, ka, ai, bi, oi);
    } else if (!ta && tb) {
      detail::gemm_nt(m, nn, ka, ai, bi, oi);
    } else if (ta && !tb) {
      detail::gemm_tn(m, nn, ka, ai, bi, oi);
    } else {
      // A^T * B^T: fall back to explicit loops (unused on hot paths).
      for (i64 r = 0; r < m; ++r) {
        for (i64 cidx = 0; cidx < nn; ++cidx) {
          T acc = 0;
          for (i64 p = 0; p < ka; ++p) {
            acc += ai[p * m + r] * bi[cidx * ka + p];
          }
          oi[r * nn + cidx] += acc;
        }
      }
    }
  });
  detail::assert_finite(out->values, "matmul");
  if (out->requires_grad) {
    auto an = a.node();
    auto bn = b.node();
    auto* o = out.get();
    out->backward = [o, an, bn, ta, tb, m, nn, ka, batch, asz, bsz, osz]() {
      const T* g = o->grad.data();
      const T* pa = an->values.data();
      const T* pb = bn->values.data();
      for (i64 i = 0; i < batch; ++i) {
        const T* gi = g + i * osz;
        const T* ai = pa + i * asz;
        const T* bi = pb + i * bsz;
        if (an->requires_grad) {
          T* ga = an->grad.data() + i * asz;
          // dA = ta ? (op(B) @ dY^T)^T : dY @ op(B)^T, op(B)=B^T if tb
          if (!ta && !tb) {
            detail::gemm_nt(m, ka, nn, gi, bi, ga);
          } else if (!ta && tb) {
            detail::gemm_nn(m, ka, nn, gi, bi, ga);
          } else if (ta && !tb) {
            detail::gemm_nt(ka, m, nn, bi, gi, ga);  // dA^T layout == ka x m
          } else {
            for (i64 p = 0; p < ka; ++p)
              for (i64 r = 0; r < m; ++r) {
                T acc = 0;
                for (i64 c = 0; c < nn; ++c)
                  acc += gi[r * nn + c] * bi[c * ka + p];
                ga[p * m + r] += acc;
              }
          }
        }
        if (bn->requires_grad) {
          T* gb = bn->grad.data() + i * bsz;
          if (!ta && !tb) {
            detail::gemm_tn(ka, nn, m, ai, gi, gb);
          } else if (!ta && tb) {
            detail::gemm_tn(nn, ka, m, gi, ai, gb);
          } else if (ta && !tb) {
            detail::gemm_nn(ka, nn, m, ai, gi, gb);
          } else {
            for (i64 c = 0; c < nn; ++c)
              for (i64 p = 0; p < ka; ++p) {
                T acc = 0;
                for (i64 r = 0; r < m; ++r)
                  acc += ai[p * m + r] * gi[r * nn + c];
                gb[c * ka + p] += acc;
              }
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// --- partition-grid ops --------------------------------------------------

// Mean over each of k strips along `axis` (3: width -> [n,c,1,k];
// 2: height -> [n,c,k,1]); the complementary spatial axis is averaged too.
template <typename T>
Tensor<T> strip_mean(const Tensor<T>& x, i64 k, int axis) {
  const Shape s = x.shape();
  check(axis == 2 || axis == 3, "strip_mean: axis must be 2 or 3");
  const i64 extent = (axis == 3) ? s.w : s.h;
  const auto bounds = partition_bounds(extent, k);
  const Shape os =
      (axis == 3) ? Shape{s.n, s.c, 1, k} : Shape{s.n, s.c, k, 1};
  auto out = detail::make_node<T>(os, {x.node()});
  const T* px = x.values().data();
  T* po = out->values.data();
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* xp = px + (n * s.c + c) * s.h * s.w;
      for (i64 mix = 0; mix < k; ++mix) {
        const auto [lo, hi] = bounds[static_cast<size_t>(mix)];
        double acc = 0;
        if (axis == 3) {
          for (i64 y = 0; y < s.h; ++y)
            for (i64 xw = lo; xw < hi; ++xw) acc += xp[y * s.w + xw];
          acc /= static_cast<double>(s.h * (hi - lo));
        } else {
          for (i64 y = lo; y < hi; ++y)
            for (i64 xw = 0; xw < s.w; ++xw) acc += xp[y * s.w + xw];
          acc /= static_cast<double>((hi - lo) * s.w);
        }
        po[(n * s.c + c) * k + mix] = static_cast<T>(acc);
      }
    }
  }
  detail::assert_finite(out->values, "strip_mean");
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    auto bptr =
        std::make_shared<std::vector<std::pair<i64, i64>>>(bounds);
    out->backward = [o, xn, bptr, s, k, axis]() {
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        for (i64 c = 0; c < s.c; ++c) {
          T* xp = gx + (n * s.c + c) * s.h * s.w;
          for (i64 mix = 0; mix < k; ++mix) {
            const auto [lo, hi] = (*bptr)[static_cast<size_t>(mix)];
            const i64 cnt =
                (axis == 3) ? s.h * (hi - lo) : (hi - lo) * s.w;
            const T gv = g[(n * s.c + c) * k + mix] / static_cast<T>(cnt);
            if (axis == 3) {
              for (i64 y = 0; y < s.h; ++y)
                for (i64 xw = lo; xw < hi; ++xw) xp[y * s.w + xw] += gv;
            } else {
              for (i64 y = lo; y < hi; ++y)
                for (i64 xw = 0; xw < s.w; ++xw) xp[y * s.w + xw] += gv;
            }
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// Expands a k_h x k_w grid to H x W by repeating each cell over its
// partition region (remainders absorbed by the trailing region).
template <typename T>
Tensor<T> region_expand(const Tensor<T>& e, i64 out_h, i64 out_w) {
  const Shape s = e.shape();
  const auto by = partition_bounds(out_h, s.h);
  const auto bx = partition_bounds(out_w, s.w);
  auto out = detail::make_node<T>({s.n, s.c, out_h, out_w}, {e.node()});
  const T* pe = e.values().data();
  T* po = out->values.data();
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* ep = pe + (n * s.c + c) * s.h * s.w;
      T* op = po + (n * s.c + c) * out_h * out_w;
      for (i64 m = 0; m < s.h; ++m) {
        const auto [ylo, yhi] = by[static_cast<size_t>(m)];
        for (i64 j = 0; j < s.w; ++j) {
          const auto [xlo, xhi] = bx[static_cast<size_t>(j)];
          const T v = ep[m * s.w + j];
          for (i64 y = ylo; y < yhi; ++y) {
            for (i64 x = xlo; x < xhi; ++x) op[y * out_w + x] = v;
          }
        }
      }
    }
  }
  if (out->requires_grad) {
    auto en = e.node();
    auto* o = out.get();
    auto byp = std::make_shared<std::vector<std::pair<i64, i64>>>(by);
    auto bxp = std::make_shared<std::vector<std::pair<i64, i64>>>(bx);
    out->backward = [o, en, byp, bxp, s, out_h, out_w]() {
      const T* g = o->grad.data();
      T* ge = en->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        for (i64 c = 0; c < s.c; ++c) {
          const T* gp = g + (n * s.c + c) * out_h * out_w;
          T* ep = ge + (n * s.c + c) * s.h * s.w;
          for (i64 m = 0; m < s.h; ++m) {
            const auto [ylo, yhi] = (*byp)[static_cast<size_t>(m)];
            for (i64 j = 0; j < s.w; ++j) {
              const auto [xlo, xhi] = (*bxp)[static_cast<size_t>(j)];
              T acc = 0;
              for (i64 y = ylo; y < yhi; ++y) {
                for (i64 x = xlo; x < xhi; ++x) acc += gp[y * out_w + x];
              }
              ep[m * s.w + j] += acc;
            }
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// --- slice-stack ops for spatial-channel attention ------------------------

// [n,c,h,w] with h==w -> [n, h+w, c, s]: first h slices are rows
// (x[:,:,y,:]), the next w are columns (x[:,:,:,x]).
template <typename T>
Tensor<T> slice_stack(const Tensor<T>& x) {
  const Shape s = x.shape();
  check(s.h == s.w, "slice_stack: non-square feature " + s.str());
  const i64 S = s.h;
  auto out = detail::make_node<T>({s.n, 2 * S, s.c, S}, {x.node()});
  const T* px = x.values().data();
  T* po = out->values.data();
  for (i64 n = 0; n < s.n; ++n) {
    const T* xn_ = px + n * s.c * S * S;
    T* on = po + n * 2 * S * s.c * S;
    for (i64 y = 0; y < S; ++y) {
      T* slice = on + y * s.c * S;
      for (i64 c = 0; c < s.c; ++c) {
        std::memcpy(slice + c * S, xn_ + (c * S + y) * S,
                    sizeof(T) * static_cast<size_t>(S));
      }
    }
    for (i64 xw = 0; xw < S; ++xw) {
      T* slice = on + (S + xw) * s.c * S;
      for (i64 c = 0; c < s.c; ++c) {
        for (i64 y = 0; y < S; ++y) slice[c * S + y] = xn_[(c * S + y) * S + xw];
      }
    }
  }
  if (out->requires_grad) {
    auto xn = x.node();
    auto* o = out.get();
    out->backward = [o, xn, s]() {
      const i64 S = s.h;
      const T* g = o->grad.data();
      T* gx = xn->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        T* gxn = gx + n * s.c * S * S;
        const T* gn = g + n * 2 * S * s.c * S;
        for (i64 y = 0; y < S; ++y) {
          const T* slice = gn + y * s.c * S;
          for (i64 c = 0; c < s.c; ++c) {
            for (i64 xw = 0; xw < S; ++xw)
              gxn[(c * S + y) * S + xw] += slice[c * S + xw];
          }
        }
        for (i64 xw = 0; xw < S; ++xw) {
          const T* slice = gn + (S + xw) * s.c * S;
          for (i64 c = 0; c < s.c; ++c) {
            for (i64 y = 0; y < S; ++y)
              gxn[(c * S + y) * S + xw] += slice[c * S + y];
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// Inverse assembly: row group and column group each rebuild a [n,c,h,w] map;
// the result is their average.
template <typename T>
Tensor<T> slice_unstack(const Tensor<T>& o, i64 h, i64 w) {
  const Shape s = o.shape();
  check(h == w && s.c == 2 * h && s.w == h,
        "slice_unstack: layout mismatch for " + s.str());
  const i64 S = h;
  const i64 C = s.h;
  auto out = detail::make_node<T>({s.n, C, h, w}, {o.node()});
  const T* po_ = o.values().data();
  T* py = out->values.data();
  for (i64 n = 0; n < s.n; ++n) {
    const T* on = po_ + n * 2 * S * C * S;
    T* yn = py + n * C * S * S;
    for (i64 c = 0; c < C; ++c) {
      for (i64 y = 0; y < S; ++y) {
        for (i64 x = 0; x < S; ++x) {
          const T row_v = on[(y * C + c) * S + x];
          const T col_v = on[((S + x) * C + c) * S + y];
          yn[(c * S + y) * S + x] = static_cast<T>(0.5) * (row_v + col_v);
        }
      }
    }
  }
  if (out->requires_grad) {
    auto on_ = o.node();
    auto* oo = out.get();
    out->backward = [oo, on_, S, C, s]() {
      const T* g = oo->grad.data();
      T* go = on_->grad.data();
      for (i64 n = 0; n < s.n; ++n) {
        const T* gn = g + n * C * S * S;
        T* gon = go + n * 2 * S * C * S;
        for (i64 c = 0; c < C; ++c) {
          for (i64 y = 0; y < S; ++y) {
            for (i64 x = 0; x < S; ++x) {
              const T gv = static_cast<T>(0.5) * gn[(c * S + y) * S + x];
              gon[(y * C + c) * S + x] += gv;
              gon[((S + x) * C + c) * S + y] += gv;
            }
          }
        }
      }
    };
  }
  return Tensor<T>(std::move(out));
}

// --- loss ----------------------------------------------------------------

// Mean binary cross-entropy from logits, in the stable softplus form.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& gt) {
  check_same_shape(logits.shape(), gt.shape(), "bce");
  for (T y : gt.values()) {
    if (y != T(0) && y != T(1)) {
      throw ContractError("bce: ground truth contains non-binary value " +
                          std::to_string(static_cast<double>(y)));
    }
  }
  auto out = detail::make_node<T>({1, 1, 1, 1}, {logits.node(), gt.node()});
  const T* pz = logits.values().data();
  const T* py = gt.values().data();
  const i64 n = logits.numel();
  double acc = 0;
  for (i64 i = 0; i < n; ++i) {
    const double z = static_cast<double>(pz[i]);
    const double y = static_cast<double>(py[i]);
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
  }
  out->values[0] = static_cast<T>(acc / static_cast<double>(n));
  detail::assert_finite(out->values, "bce");
  if (out->requires_grad) {
    auto zn = logits.node();
    auto* o = out.get();
    auto yn = gt.node();
    out->backward = [o, zn, yn, n]() {
      if (!zn->requires_grad) return;
      const T g = o->grad[0];
      const T* pz = zn->values.data();
      const T* py = yn->values.data();
      T* gz = zn->grad.data();
      const T inv = g / static_cast<T>(n);
      for (i64 i = 0; i < n; ++i) {
        const T z = pz[i];
        const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z))
                              : std::exp(z) / (T(1) + std::exp(z));
        gz[i] += inv * (p - py[i]);
      }
    };
  }
  return Tensor<T>(std::move(out));
}

}  // namespace cebsnet
