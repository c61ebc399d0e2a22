// SPDX-License-Identifier: Apache-2.0
//
// Differentiable op library over Tape/Var. Shapes are validated eagerly;
// GEMM-shaped work goes through Eigen maps, everything else is plain loops.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <cmath>
#include <vector>

#include "ocvp/core/rng.hpp"
#include "ocvp/core/tape.hpp"

namespace ocvp::core {

template <class T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using EMap = Eigen::Map<EMat<T>>;
template <class T>
using ECMap = Eigen::Map<const EMat<T>>;

namespace detail {

template <class T>
inline bool any_needs(std::initializer_list<Var<T>> vs) {
  for (const auto& v : vs)
    if (v.tape->needs_grad(v.id)) return true;
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  OCVP_CHECK(same_shape(a.val(), b.val()),
             "add: shape mismatch " << shape_str(a.val().shape) << " vs " << shape_str(b.val().shape));
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] += b.val().data[i];
  const int32_t ida = a.id, idb = b.id;
  return tp.make(std::move(out), detail::any_needs<T>({a, b}), [ida, idb](Tape<T>& t, int32_t self) {
    t.accum_grad(ida, t.grad(self));
    t.accum_grad(idb, t.grad(self));
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  OCVP_CHECK(same_shape(a.val(), b.val()),
             "sub: shape mismatch " << shape_str(a.val().shape) << " vs " << shape_str(b.val().shape));
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] -= b.val().data[i];
  const int32_t ida = a.id, idb = b.id;
  return tp.make(std::move(out), detail::any_needs<T>({a, b}), [ida, idb](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accum_grad(ida, g);
    if (t.needs_grad(idb)) {
      Tensor<T> ng = g;
      for (auto& v : ng.data) v = -v;
      t.accum_grad(idb, ng);
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  OCVP_CHECK(same_shape(a.val(), b.val()),
             "mul: shape mismatch " << shape_str(a.val().shape) << " vs " << shape_str(b.val().shape));
  Tensor<T> out = a.val();
  for (int64_t i = 0; i < out.numel(); ++i) out.data[i] *= b.val().data[i];
  const int32_t ida = a.id, idb = b.id;
  return tp.make(std::move(out), detail::any_needs<T>({a, b}), [ida, idb](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(ida)) {
      Tensor<T> ga = g;
      const Tensor<T>& bv = t.value(idb);
      for (int64_t i = 0; i < ga.numel(); ++i) ga.data[i] *= bv.data[i];
      t.accum_grad(ida, ga);
    }
    if (t.needs_grad(idb)) {
      Tensor<T> gb = g;
      const Tensor<T>& av = t.value(ida);
      for (int64_t i = 0; i < gb.numel(); ++i) gb.data[i] *= av.data[i];
      t.accum_grad(idb, gb);
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  auto& tp = *a.tape;
  Tensor<T> out = a.val();
  for (auto& v : out.data) v *= s;
  const int32_t ida = a.id;
  return tp.make(std::move(out), tp.needs_grad(ida), [ida, s](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    for (auto& v : g.data) v *= s;
    t.accum_grad(ida, g);
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  auto& tp = *a.tape;
  Tensor<T> out = a.val();
  for (auto& v : out.data) v += s;
  const int32_t ida = a.id;
  return tp.make(std::move(out), tp.needs_grad(ida),
                 [ida](Tape<T>& t, int32_t self) { t.accum_grad(ida, t.grad(self)); });
}

template <class T>
Var<T> relu(Var<T> a) {
  auto& tp = *a.tape;
  Tensor<T> out = a.val();
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  const int32_t ida = a.id;
  return tp.make(std::move(out), tp.needs_grad(ida), [ida](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    const Tensor<T>& av = t.value(ida);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (av.data[i] <= T(0)) g.data[i] = T(0);
    t.accum_grad(ida, g);
  });
}

template <class T>
Var<T> gelu(Var<T> a) {
  auto& tp = *a.tape;
  Tensor<T> out = a.val();
  const T inv_sqrt2 = T(0.70710678118654752440);
  for (auto& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  const int32_t ida = a.id;
  return tp.make(std::move(out), tp.needs_grad(ida), [ida, inv_sqrt2](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    const Tensor<T>& av = t.value(ida);
    const T inv_sqrt2pi = T(0.39894228040143267794);
    for (int64_t i = 0; i < g.numel(); ++i) {
      T x = av.data[i];
      T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
      T pdf = inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      g.data[i] *= cdf + x * pdf;
    }
    t.accum_grad(ida, g);
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  auto& tp = *a.tape;
  Tensor<T> out = a.val();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  const int32_t ida = a.id;
  return tp.make(std::move(out), tp.needs_grad(ida), [ida](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    for (int64_t i = 0; i < g.numel(); ++i) g.data[i] *= y.data[i] * (T(1) - y.data[i]);
    t.accum_grad(ida, g);
  });
}

template <class T>
Var<T> square(Var<T> a) {
  return mul(a, a);
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

/// x [..., in] * w [in, out] + b [out]; b optional (invalid Var skips bias).
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b = {}) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  OCVP_CHECK(ws.size() == 2, "linear: weight must be 2D, got " << shape_str(ws));
  OCVP_CHECK(!xs.empty() && xs.back() == ws[0],
             "linear: input " << shape_str(xs) << " incompatible with weight " << shape_str(ws));
  const int64_t in = ws[0], out_dim = ws[1];
  const int64_t rows = x.val().numel() / in;
  Tensor<T> out;
  out.shape = xs;
  out.shape.back() = out_dim;
  out.data.resize(static_cast<size_t>(rows * out_dim));
  {
    ECMap<T> xm(x.val().ptr(), rows, in);
    ECMap<T> wm(w.val().ptr(), in, out_dim);
    EMap<T> om(out.ptr(), rows, out_dim);
    om.noalias() = xm * wm;
    if (b.valid()) {
      OCVP_CHECK(b.val().numel() == out_dim, "linear: bias size mismatch");
      ECMap<T> bm(b.val().ptr(), 1, out_dim);
      om.rowwise() += bm.row(0);
    }
  }
  bool needs = b.valid() ? detail::any_needs<T>({x, w, b}) : detail::any_needs<T>({x, w});
  const int32_t idx = x.id, idw = w.id, idb = b.valid() ? b.id : -1;
  return tp.make(std::move(out), needs, [idx, idw, idb, rows, in, out_dim](Tape<T>& t, int32_t self) {
    ECMap<T> gm(t.grad(self).ptr(), rows, out_dim);
    if (t.needs_grad(idx)) {
      Tensor<T> gx = Tensor<T>::zeros(t.value(idx).shape);
      EMap<T> gxm(gx.ptr(), rows, in);
      ECMap<T> wm(t.value(idw).ptr(), in, out_dim);
      gxm.noalias() = gm * wm.transpose();
      t.accum_grad(idx, gx);
    }
    if (t.needs_grad(idw)) {
      Tensor<T> gw = Tensor<T>::zeros(t.value(idw).shape);
      EMap<T> gwm(gw.ptr(), in, out_dim);
      ECMap<T> xm(t.value(idx).ptr(), rows, in);
      gwm.noalias() = xm.transpose() * gm;
      t.accum_grad(idw, gw);
    }
    if (idb >= 0 && t.needs_grad(idb)) {
      Tensor<T> gb = Tensor<T>::zeros(t.value(idb).shape);
      EMap<T> gbm(gb.ptr(), 1, out_dim);
      gbm.row(0) = gm.colwise().sum();
      t.accum_grad(idb, gb);
    }
  });
}

/// Batched matmul, a [B,m,k] x b [B,k,n] -> [B,m,n].
template <class T>
Var<T> bmm_nn(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  const auto& as = a.val().shape;
  const auto& bs = b.val().shape;
  OCVP_CHECK(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[1],
             "bmm_nn: incompatible " << shape_str(as) << " x " << shape_str(bs));
  const int64_t B = as[0], m = as[1], k = as[2], n = bs[2];
  Tensor<T> out({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    ECMap<T> am(a.val().ptr() + i * m * k, m, k);
    ECMap<T> bm(b.val().ptr() + i * k * n, k, n);
    EMap<T> om(out.ptr() + i * m * n, m, n);
    om.noalias() = am * bm;
  }
  const int32_t ida = a.id, idb = b.id;
  return tp.make(std::move(out), detail::any_needs<T>({a, b}), [ida, idb, B, m, k, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(ida)) {
      Tensor<T> ga = Tensor<T>::zeros({B, m, k});
      for (int64_t i = 0; i < B; ++i) {
        ECMap<T> gm(g.ptr() + i * m * n, m, n);
        ECMap<T> bm(t.value(idb).ptr() + i * k * n, k, n);
        EMap<T> gam(ga.ptr() + i * m * k, m, k);
        gam.noalias() = gm * bm.transpose();
      }
      t.accum_grad(ida, ga);
    }
    if (t.needs_grad(idb)) {
      Tensor<T> gb = Tensor<T>::zeros({B, k, n});
      for (int64_t i = 0; i < B; ++i) {
        ECMap<T> gm(g.ptr() + i * m * n, m, n);
        ECMap<T> am(t.value(ida).ptr() + i * m * k, m, k);
        EMap<T> gbm(gb.ptr() + i * k * n, k, n);
        gbm.noalias() = am.transpose() * gm;
      }
      t.accum_grad(idb, gb);
    }
  });
}

/// Batched matmul with transposed rhs, a [B,m,k] x b [B,n,k]^T -> [B,m,n].
template <class T>
Var<T> bmm_nt(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  const auto& as = a.val().shape;
  const auto& bs = b.val().shape;
  OCVP_CHECK(as.size() == 3 && bs.size() == 3 && as[0] == bs[0] && as[2] == bs[2],
             "bmm_nt: incompatible " << shape_str(as) << " x " << shape_str(bs));
  const int64_t B = as[0], m = as[1], k = as[2], n = bs[1];
  Tensor<T> out({B, m, n});
  for (int64_t i = 0; i < B; ++i) {
    ECMap<T> am(a.val().ptr() + i * m * k, m, k);
    ECMap<T> bm(b.val().ptr() + i * n * k, n, k);
    EMap<T> om(out.ptr() + i * m * n, m, n);
    om.noalias() = am * bm.transpose();
  }
  const int32_t ida = a.id, idb = b.id;
  return tp.make(std::move(out), detail::any_needs<T>({a, b}), [ida, idb, B, m, k, n](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(ida)) {
      Tensor<T> ga = Tensor<T>::zeros({B, m, k});
      for (int64_t i = 0; i < B; ++i) {
        ECMap<T> gm(g.ptr() + i * m * n, m, n);
        ECMap<T> bm(t.value(idb).ptr() + i * n * k, n, k);
        EMap<T> gam(ga.ptr() + i * m * k, m, k);
        gam.noalias() = gm * bm;
      }
      t.accum_grad(ida, ga);
    }
    if (t.needs_grad(idb)) {
      Tensor<T> gb = Tensor<T>::zeros({B, n, k});
      for (int64_t i = 0; i < B; ++i) {
        ECMap<T> gm(g.ptr() + i * m * n, m, n);
        ECMap<T> am(t.value(ida).ptr() + i * m * k, m, k);
        EMap<T> gbm(gb.ptr() + i * n * k, n, k);
        gbm.noalias() = gm.transpose() * am;
      }
      t.accum_grad(idb, gb);
    }
  });
}

// ---------------------------------------------------------------------------
// softmax / normalization
// ---------------------------------------------------------------------------

/// Softmax over the last dim. With `causal`, input must be [..., R, C] with
/// R == C and entries j > i of each row i are masked out.
template <class T>
Var<T> softmax_last(Var<T> x, bool causal = false) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(xs.size() >= 1, "softmax_last: rank >= 1 required");
  const int64_t C = xs.back();
  const int64_t rows = x.val().numel() / C;
  int64_t R = 1;
  if (causal) {
    OCVP_CHECK(xs.size() >= 2, "softmax_last: causal needs rank >= 2");
    R = xs[xs.size() - 2];
    OCVP_CHECK(R == C, "softmax_last: causal mask needs square last two dims, got " << shape_str(xs));
  }
  Tensor<T> out = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * C;
    const int64_t limit = causal ? (r % R) + 1 : C;
    T mx = row[0];
    for (int64_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (int64_t j = 0; j < limit; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (int64_t j = 0; j < limit; ++j) row[j] /= sum;
    for (int64_t j = limit; j < C; ++j) row[j] = T(0);
  }
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx, rows, C, causal, R](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& y = t.value(self);
    Tensor<T> gx = Tensor<T>::zeros(y.shape);
    for (int64_t r = 0; r < rows; ++r) {
      const T* gr = g.ptr() + r * C;
      const T* yr = y.ptr() + r * C;
      T* gxr = gx.ptr() + r * C;
      const int64_t limit = causal ? (r % R) + 1 : C;
      T dot = T(0);
      for (int64_t j = 0; j < limit; ++j) dot += gr[j] * yr[j];
      for (int64_t j = 0; j < limit; ++j) gxr[j] = yr[j] * (gr[j] - dot);
    }
    t.accum_grad(idx, gx);
  });
}

/// LayerNorm over the last dim with learned gain/bias.
template <class T>
Var<T> layernorm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  const int64_t C = xs.back();
  OCVP_CHECK(gamma.val().numel() == C && beta.val().numel() == C, "layernorm: gain/bias size mismatch");
  const int64_t rows = x.val().numel() / C;
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);     // cached for backward
  Tensor<T> inv_std({rows});
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().ptr() + r * C;
    T mean = T(0);
    for (int64_t j = 0; j < C; ++j) mean += xr[j];
    mean /= T(C);
    T var = T(0);
    for (int64_t j = 0; j < C; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(C);
    const T istd = T(1) / std::sqrt(var + eps);
    inv_std.data[r] = istd;
    T* hr = xhat.ptr() + r * C;
    T* orow = out.ptr() + r * C;
    for (int64_t j = 0; j < C; ++j) {
      hr[j] = (xr[j] - mean) * istd;
      orow[j] = hr[j] * gamma.val().data[j] + beta.val().data[j];
    }
  }
  const int32_t idx = x.id, idg = gamma.id, idb = beta.id;
  auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
  auto istd_p = std::make_shared<Tensor<T>>(std::move(inv_std));
  return tp.make(std::move(out), detail::any_needs<T>({x, gamma, beta}),
                 [idx, idg, idb, rows, C, xhat_p, istd_p](Tape<T>& t, int32_t self) {
                   const Tensor<T>& g = t.grad(self);
                   const Tensor<T>& gam = t.value(idg);
                   if (t.needs_grad(idg) || t.needs_grad(idb)) {
                     Tensor<T> gg = Tensor<T>::zeros({C});
                     Tensor<T> gb = Tensor<T>::zeros({C});
                     for (int64_t r = 0; r < rows; ++r)
                       for (int64_t j = 0; j < C; ++j) {
                         gg.data[j] += g.data[r * C + j] * xhat_p->data[r * C + j];
                         gb.data[j] += g.data[r * C + j];
                       }
                     t.accum_grad(idg, gg);
                     t.accum_grad(idb, gb);
                   }
                   if (t.needs_grad(idx)) {
                     Tensor<T> gx = Tensor<T>::zeros(t.value(idx).shape);
                     for (int64_t r = 0; r < rows; ++r) {
                       const T* gr = g.ptr() + r * C;
                       const T* hr = xhat_p->ptr() + r * C;
                       T* gxr = gx.ptr() + r * C;
                       T s1 = T(0), s2 = T(0);
                       for (int64_t j = 0; j < C; ++j) {
                         const T dg = gr[j] * gam.data[j];
                         s1 += dg;
                         s2 += dg * hr[j];
                       }
                       s1 /= T(C);
                       s2 /= T(C);
                       const T istd = istd_p->data[r];
                       for (int64_t j = 0; j < C; ++j) {
                         const T dg = gr[j] * gam.data[j];
                         gxr[j] = (dg - s1 - hr[j] * s2) * istd;
                       }
                     }
                     t.accum_grad(idx, gx);
                   }
                 });
}

// ---------------------------------------------------------------------------
// convolution / spatial
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void im2col(const T* x, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t OH, int64_t OW, T* cols) {
  for (int64_t c = 0; c < Cin; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((c * kh + ky) * kw + kx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            dst[oy * OW + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x[(c * H + iy) * W + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im_accum(const T* cols, int64_t Cin, int64_t H, int64_t W, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t OH, int64_t OW, T* gx) {
  for (int64_t c = 0; c < Cin; ++c)
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((c * kh + ky) * kw + kx) * OH * OW;
        for (int64_t oy = 0; oy < OH; ++oy) {
          const int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int64_t ox = 0; ox < OW; ++ox) {
            const int64_t ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            gx[(c * H + iy) * W + ix] += src[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

/// conv2d: x [N,Cin,H,W], w [Cout,Cin,kh,kw], b [Cout] (optional).
template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int64_t stride, int64_t pad) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  const auto& ws = w.val().shape;
  OCVP_CHECK(xs.size() == 4 && ws.size() == 4 && xs[1] == ws[1],
             "conv2d: incompatible " << shape_str(xs) << " with " << shape_str(ws));
  const int64_t N = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
  const int64_t Cout = ws[0], kh = ws[2], kw = ws[3];
  const int64_t OH = (H + 2 * pad - kh) / stride + 1;
  const int64_t OW = (W + 2 * pad - kw) / stride + 1;
  OCVP_CHECK(OH > 0 && OW > 0, "conv2d: empty output");
  const int64_t K = Cin * kh * kw;
  Tensor<T> out({N, Cout, OH, OW});
  std::vector<T> cols(static_cast<size_t>(K * OH * OW));
  for (int64_t n = 0; n < N; ++n) {
    detail::im2col(x.val().ptr() + n * Cin * H * W, Cin, H, W, kh, kw, stride, pad, OH, OW, cols.data());
    ECMap<T> wm(w.val().ptr(), Cout, K);
    ECMap<T> cm(cols.data(), K, OH * OW);
    EMap<T> om(out.ptr() + n * Cout * OH * OW, Cout, OH * OW);
    om.noalias() = wm * cm;
    if (b.valid()) {
      const T* bp = b.val().ptr();
      for (int64_t c = 0; c < Cout; ++c) om.row(c).array() += bp[c];
    }
  }
  bool needs = b.valid() ? detail::any_needs<T>({x, w, b}) : detail::any_needs<T>({x, w});
  const int32_t idx = x.id, idw = w.id, idb = b.valid() ? b.id : -1;
  return tp.make(std::move(out), needs,
                 [idx, idw, idb, N, Cin, H, W, Cout, kh, kw, stride, pad, OH, OW, K](Tape<T>& t, int32_t self) {
                   const Tensor<T>& g = t.grad(self);
                   std::vector<T> cols(static_cast<size_t>(K * OH * OW));
                   Tensor<T> gw, gx;
                   const bool want_w = t.needs_grad(idw);
                   const bool want_x = t.needs_grad(idx);
                   if (want_w) gw = Tensor<T>::zeros(t.value(idw).shape);
                   if (want_x) gx = Tensor<T>::zeros(t.value(idx).shape);
                   for (int64_t n = 0; n < N; ++n) {
                     ECMap<T> gm(g.ptr() + n * Cout * OH * OW, Cout, OH * OW);
                     if (want_w) {
                       detail::im2col(t.value(idx).ptr() + n * Cin * H * W, Cin, H, W, kh, kw, stride,
                                      pad, OH, OW, cols.data());
                       ECMap<T> cm(cols.data(), K, OH * OW);
                       EMap<T> gwm(gw.ptr(), Cout, K);
                       gwm.noalias() += gm * cm.transpose();
                     }
                     if (want_x) {
                       ECMap<T> wm(t.value(idw).ptr(), Cout, K);
                       EMap<T> cm(cols.data(), K, OH * OW);
                       cm.noalias() = wm.transpose() * gm;
                       detail::col2im_accum(cols.data(), Cin, H, W, kh, kw, stride, pad, OH, OW,
                                            gx.ptr() + n * Cin * H * W);
                     }
                   }
                   if (want_w) t.accum_grad(idw, gw);
                   if (want_x) t.accum_grad(idx, gx);
                   if (idb >= 0 && t.needs_grad(idb)) {
                     Tensor<T> gb = Tensor<T>::zeros({Cout});
                     for (int64_t n = 0; n < N; ++n)
                       for (int64_t c = 0; c < Cout; ++c) {
                         const T* gp = g.ptr() + (n * Cout + c) * OH * OW;
                         T s = T(0);
                         for (int64_t i = 0; i < OH * OW; ++i) s += gp[i];
                         gb.data[c] += s;
                       }
                     t.accum_grad(idb, gb);
                   }
                 });
}

/// Nearest-neighbor 2x upsample of [N,C,H,W].
template <class T>
Var<T> upsample_nearest2(Var<T> x) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(xs.size() == 4, "upsample_nearest2: expects [N,C,H,W]");
  const int64_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor<T> out({N, C, 2 * H, 2 * W});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = x.val().ptr() + nc * H * W;
    T* dst = out.ptr() + nc * 4 * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xq = 0; xq < W; ++xq) {
        const T v = src[y * W + xq];
        dst[(2 * y) * 2 * W + 2 * xq] = v;
        dst[(2 * y) * 2 * W + 2 * xq + 1] = v;
        dst[(2 * y + 1) * 2 * W + 2 * xq] = v;
        dst[(2 * y + 1) * 2 * W + 2 * xq + 1] = v;
      }
  }
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx, N, C, H, W](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T> gx = Tensor<T>::zeros({N, C, H, W});
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T* gp = g.ptr() + nc * 4 * H * W;
      T* dst = gx.ptr() + nc * H * W;
      for (int64_t y = 0; y < H; ++y)
        for (int64_t xq = 0; xq < W; ++xq)
          dst[y * W + xq] = gp[(2 * y) * 2 * W + 2 * xq] + gp[(2 * y) * 2 * W + 2 * xq + 1] +
                            gp[(2 * y + 1) * 2 * W + 2 * xq] + gp[(2 * y + 1) * 2 * W + 2 * xq + 1];
    }
    t.accum_grad(idx, gx);
  });
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Var<T> reshape(Var<T> x, std::vector<int64_t> new_shape) {
  auto& tp = *x.tape;
  OCVP_CHECK(shape_numel(new_shape) == x.val().numel(),
             "reshape: numel mismatch " << shape_str(x.val().shape) << " -> " << shape_str(new_shape));
  Tensor<T> out;
  out.shape = std::move(new_shape);
  out.data = x.val().data;
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    g.shape = t.value(idx).shape;
    t.accum_grad(idx, g);
  });
}

namespace detail {

inline std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) s[i] = s[i + 1] * shape[i + 1];
  return s;
}

template <class T>
void permute_copy(const T* src, const std::vector<int64_t>& in_shape, const std::vector<int>& perm,
                  T* dst) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<int64_t> out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = strides_of(in_shape);
  const auto out_strides = strides_of(out_shape);
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> idx(r, 0);
  for (int64_t flat = 0; flat < n; ++flat) {
    int64_t rem = flat;
    int64_t src_off = 0;
    for (int i = 0; i < r; ++i) {
      idx[i] = rem / out_strides[i];
      rem %= out_strides[i];
      src_off += idx[i] * in_strides[perm[i]];
    }
    dst[flat] = src[src_off];
  }
}

}  // namespace detail

/// Axis permutation with copy, e.g. perm {1,0,2} swaps the first two axes.
template <class T>
Var<T> permute(Var<T> x, std::vector<int> perm) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(perm.size() == xs.size(), "permute: rank mismatch");
  std::vector<int64_t> out_shape(xs.size());
  for (size_t i = 0; i < perm.size(); ++i) out_shape[i] = xs[static_cast<size_t>(perm[i])];
  Tensor<T> out(out_shape);
  detail::permute_copy(x.val().ptr(), xs, perm, out.ptr());
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx, perm](Tape<T>& t, int32_t self) {
    // inverse permutation routes gradients back
    std::vector<int> inv(perm.size());
    for (size_t i = 0; i < perm.size(); ++i) inv[static_cast<size_t>(perm[i])] = static_cast<int>(i);
    Tensor<T> gx = Tensor<T>::zeros(t.value(idx).shape);
    detail::permute_copy(t.grad(self).ptr(), t.value(self).shape, inv, gx.ptr());
    t.accum_grad(idx, gx);
  });
}

/// Concatenation along `axis`.
template <class T>
Var<T> concat(const std::vector<Var<T>>& xs, int axis) {
  OCVP_CHECK(!xs.empty(), "concat: empty input list");
  auto& tp = *xs[0].tape;
  const auto& s0 = xs[0].val().shape;
  const int r = static_cast<int>(s0.size());
  OCVP_CHECK(axis >= 0 && axis < r, "concat: bad axis");
  std::vector<int64_t> out_shape = s0;
  int64_t axis_total = 0;
  for (const auto& v : xs) {
    const auto& s = v.val().shape;
    OCVP_CHECK(static_cast<int>(s.size()) == r, "concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis) OCVP_CHECK(s[i] == s0[i], "concat: shape mismatch on axis " << i);
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (int i = axis + 1; i < r; ++i) inner *= s0[i];
  Tensor<T> out(out_shape);
  bool needs = false;
  std::vector<int32_t> ids;
  std::vector<int64_t> widths;
  for (const auto& v : xs) {
    ids.push_back(v.id);
    widths.push_back(v.val().shape[axis] * inner);
    needs = needs || tp.needs_grad(v.id);
  }
  const int64_t out_row = axis_total * inner;
  {
    int64_t off = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
      const T* src = xs[k].val().ptr();
      for (int64_t o = 0; o < outer; ++o)
        std::copy(src + o * widths[k], src + (o + 1) * widths[k], out.ptr() + o * out_row + off);
      off += widths[k];
    }
  }
  return tp.make(std::move(out), needs, [ids, widths, outer, out_row](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    int64_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        Tensor<T> gk = Tensor<T>::zeros(t.value(ids[k]).shape);
        for (int64_t o = 0; o < outer; ++o)
          std::copy(g.ptr() + o * out_row + off, g.ptr() + o * out_row + off + widths[k],
                    gk.ptr() + o * widths[k]);
        t.accum_grad(ids[k], gk);
      }
      off += widths[k];
    }
  });
}

/// x [A,B,D] + u [A,D] broadcast over the middle axis.
template <class T>
Var<T> add_broadcast_mid(Var<T> x, Var<T> u) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(xs.size() == 3 && (u.val().shape == std::vector<int64_t>{xs[0], xs[2]}),
             "add_broadcast_mid: incompatible " << shape_str(xs) << " + " << shape_str(u.val().shape));
  const int64_t A = xs[0], B = xs[1], D = xs[2];
  Tensor<T> out = x.val();
  for (int64_t a = 0; a < A; ++a)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t d = 0; d < D; ++d) out.data[(a * B + b) * D + d] += u.val().data[a * D + d];
  const int32_t idx = x.id, idu = u.id;
  return tp.make(std::move(out), detail::any_needs<T>({x, u}), [idx, idu, A, B, D](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accum_grad(idx, g);
    if (t.needs_grad(idu)) {
      Tensor<T> gu = Tensor<T>::zeros({A, D});
      for (int64_t a = 0; a < A; ++a)
        for (int64_t b = 0; b < B; ++b)
          for (int64_t d = 0; d < D; ++d) gu.data[a * D + d] += g.data[(a * B + b) * D + d];
      t.accum_grad(idu, gu);
    }
  });
}

/// x [A,B,D] + v [B,D] broadcast over the leading axis.
template <class T>
Var<T> add_broadcast_lead(Var<T> x, Var<T> v) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(xs.size() == 3 && (v.val().shape == std::vector<int64_t>{xs[1], xs[2]}),
             "add_broadcast_lead: incompatible " << shape_str(xs) << " + " << shape_str(v.val().shape));
  const int64_t A = xs[0], B = xs[1], D = xs[2];
  Tensor<T> out = x.val();
  for (int64_t a = 0; a < A; ++a)
    for (int64_t i = 0; i < B * D; ++i) out.data[a * B * D + i] += v.val().data[i];
  const int32_t idx = x.id, idv = v.id;
  return tp.make(std::move(out), detail::any_needs<T>({x, v}), [idx, idv, A, B, D](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    t.accum_grad(idx, g);
    if (t.needs_grad(idv)) {
      Tensor<T> gv = Tensor<T>::zeros({B, D});
      for (int64_t a = 0; a < A; ++a)
        for (int64_t i = 0; i < B * D; ++i) gv.data[i] += g.data[a * B * D + i];
      t.accum_grad(idv, gv);
    }
  });
}

/// Rows [from, to) along the leading axis.
template <class T>
Var<T> slice_lead(Var<T> x, int64_t from, int64_t to) {
  auto& tp = *x.tape;
  const auto& xs = x.val().shape;
  OCVP_CHECK(!xs.empty() && from >= 0 && from < to && to <= xs[0],
             "slice_lead: bad range [" << from << "," << to << ") for " << shape_str(xs));
  int64_t inner = 1;
  for (size_t i = 1; i < xs.size(); ++i) inner *= xs[i];
  std::vector<int64_t> out_shape = xs;
  out_shape[0] = to - from;
  Tensor<T> out(out_shape);
  std::copy(x.val().ptr() + from * inner, x.val().ptr() + to * inner, out.ptr());
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx, from, inner](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T> gx = Tensor<T>::zeros(t.value(idx).shape);
    std::copy(g.ptr(), g.ptr() + g.numel(), gx.ptr() + from * inner);
    t.accum_grad(idx, gx);
  });
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum_all(Var<T> x) {
  auto& tp = *x.tape;
  T s = T(0);
  for (const auto& v : x.val().data) s += v;
  const int32_t idx = x.id;
  return tp.make(Tensor<T>::scalar(s), tp.needs_grad(idx), [idx](Tape<T>& t, int32_t self) {
    const T g = t.grad(self).data[0];
    Tensor<T> gx = Tensor<T>::full(t.value(idx).shape, g);
    t.accum_grad(idx, gx);
  });
}

template <class T>
Var<T> mean_all(Var<T> x) {
  const T inv_n = T(1) / static_cast<T>(x.val().numel());
  return scale(sum_all(x), inv_n);
}

template <class T>
Var<T> mse(Var<T> a, Var<T> b) {
  return mean_all(square(sub(a, b)));
}

template <class T>
Var<T> detach(Var<T> x) {
  auto& tp = *x.tape;
  return tp.leaf(x.val(), false);
}

/// Gather rows of table [K,d] at `indices` -> [P,d]; backward scatter-adds.
template <class T>
Var<T> gather_rows(Var<T> table, const std::vector<int64_t>& indices) {
  auto& tp = *table.tape;
  const auto& ts = table.val().shape;
  OCVP_CHECK(ts.size() == 2, "gather_rows: table must be [K,d]");
  const int64_t K = ts[0], d = ts[1];
  const int64_t P = static_cast<int64_t>(indices.size());
  Tensor<T> out({P, d});
  for (int64_t p = 0; p < P; ++p) {
    OCVP_CHECK(indices[p] >= 0 && indices[p] < K, "gather_rows: index " << indices[p] << " out of range");
    std::copy(table.val().ptr() + indices[p] * d, table.val().ptr() + (indices[p] + 1) * d,
              out.ptr() + p * d);
  }
  const int32_t idt = table.id;
  auto idx_p = std::make_shared<std::vector<int64_t>>(indices);
  return tp.make(std::move(out), tp.needs_grad(idt), [idt, d, idx_p](Tape<T>& t, int32_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T> gt = Tensor<T>::zeros(t.value(idt).shape);
    for (size_t p = 0; p < idx_p->size(); ++p) {
      const T* src = g.ptr() + static_cast<int64_t>(p) * d;
      T* dst = gt.ptr() + (*idx_p)[p] * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    t.accum_grad(idt, gt);
  });
}

/// Mean cross-entropy of logits [P,K] against integer targets [P].
template <class T>
Var<T> cross_entropy_mean(Var<T> logits, const std::vector<int64_t>& targets) {
  auto& tp = *logits.tape;
  const auto& ls = logits.val().shape;
  OCVP_CHECK(ls.size() == 2, "cross_entropy_mean: logits must be [P,K]");
  const int64_t P = ls[0], K = ls[1];
  OCVP_CHECK(static_cast<int64_t>(targets.size()) == P, "cross_entropy_mean: target count mismatch");
  T total = T(0);
  for (int64_t p = 0; p < P; ++p) {
    const T* row = logits.val().ptr() + p * K;
    OCVP_CHECK(targets[p] >= 0 && targets[p] < K, "cross_entropy_mean: target out of range");
    T mx = row[0];
    for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
    T lse = T(0);
    for (int64_t j = 0; j < K; ++j) lse += std::exp(row[j] - mx);
    lse = mx + std::log(lse);
    total += lse - row[targets[p]];
  }
  total /= static_cast<T>(P);
  const int32_t idl = logits.id;
  auto tgt_p = std::make_shared<std::vector<int64_t>>(targets);
  return tp.make(Tensor<T>::scalar(total), tp.needs_grad(idl), [idl, P, K, tgt_p](Tape<T>& t, int32_t self) {
    const T g = t.grad(self).data[0];
    const Tensor<T>& lv = t.value(idl);
    Tensor<T> gl = Tensor<T>::zeros(lv.shape);
    for (int64_t p = 0; p < P; ++p) {
      const T* row = lv.ptr() + p * K;
      T* gr = gl.ptr() + p * K;
      T mx = row[0];
      for (int64_t j = 1; j < K; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int64_t j = 0; j < K; ++j) denom += std::exp(row[j] - mx);
      for (int64_t j = 0; j < K; ++j) gr[j] = std::exp(row[j] - mx) / denom * g / static_cast<T>(P);
      gr[(*tgt_p)[p]] -= g / static_cast<T>(P);
    }
    t.accum_grad(idl, gl);
  });
}

/// Inverted-scale dropout; the mask draw consumes `rng` deterministically.
template <class T>
Var<T> dropout(Var<T> x, T p, Rng& rng) {
  auto& tp = *x.tape;
  if (p <= T(0)) return x;
  OCVP_CHECK(p < T(1), "dropout: p must be < 1");
  const T keep = T(1) - p;
  Tensor<T> out = x.val();
  auto mask = std::make_shared<std::vector<uint8_t>>(out.data.size());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const bool k = rng.uniform() >= static_cast<double>(p);
    (*mask)[static_cast<size_t>(i)] = k;
    out.data[i] = k ? out.data[i] / keep : T(0);
  }
  const int32_t idx = x.id;
  return tp.make(std::move(out), tp.needs_grad(idx), [idx, keep, mask](Tape<T>& t, int32_t self) {
    Tensor<T> g = t.grad(self);
    for (int64_t i = 0; i < g.numel(); ++i) g.data[i] = (*mask)[static_cast<size_t>(i)] ? g.data[i] / keep : T(0);
    t.accum_grad(idx, g);
  });
}

// ---------------------------------------------------------------------------
// operators and initializers
// ---------------------------------------------------------------------------

template <class T>
Var<T> operator+(Var<T> a, Var<T> b) {
  return add(a, b);
}
template <class T>
Var<T> operator-(Var<T> a, Var<T> b) {
  return sub(a, b);
}
template <class T>
Var<T> operator*(Var<T> a, Var<T> b) {
  return mul(a, b);
}

template <class T>
Tensor<T> tensor_uniform(Rng& rng, std::vector<int64_t> shape, double lo, double hi) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <class T>
Tensor<T> tensor_normal(Rng& rng, std::vector<int64_t> shape, double stddev) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace ocvp::core
