// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>

#include "ocvp/core/dft.hpp"
#include "ocvp/core/ops.hpp"

namespace ocvp::core {

/// Focal frequency loss between same-shaped maps whose last two dims are
/// spatial. Per map (all leading dims are treated as channels):
///
///   D = DFT2(a - b)   (orthonormal), m = |D|, M = max(m)
///   value = mean_f( (m/M) * m^2 ) = mean_f(m^3) / M
///
/// and the result is the mean over channels. The focal weight m/M keeps the
/// loss differentiable end to end, so analytic gradients match central finite
/// differences (the weight is not treated as a constant).
template <class T>
Var<T> ffl(Var<T> a, Var<T> b) {
  auto& tp = *a.tape;
  OCVP_CHECK(same_shape(a.val(), b.val()),
             "ffl: shape mismatch " << shape_str(a.val().shape) << " vs " << shape_str(b.val().shape));
  const auto& s = a.val().shape;
  OCVP_CHECK(s.size() >= 2, "ffl: rank >= 2 required");
  const int64_t h = s[s.size() - 2];
  const int64_t w = s[s.size() - 1];
  const int64_t channels = a.val().numel() / (h * w);
  const T tiny = std::numeric_limits<T>::min() * T(256);

  T total = T(0);
  for (int64_t c = 0; c < channels; ++c) {
    std::vector<T> diff(static_cast<size_t>(h * w));
    const T* ap = a.val().ptr() + c * h * w;
    const T* bp = b.val().ptr() + c * h * w;
    for (int64_t i = 0; i < h * w; ++i) diff[static_cast<size_t>(i)] = ap[i] - bp[i];
    const EMatC<T> d = dft2(diff.data(), h, w);
    T mx = T(0), s3 = T(0);
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        const T m = std::abs(d(i, j));
        mx = std::max(mx, m);
        s3 += m * m * m;
      }
    if (mx > tiny) total += s3 / (static_cast<T>(h * w) * mx);
  }
  total /= static_cast<T>(channels);

  const int32_t ida = a.id, idb = b.id;
  return tp.make(Tensor<T>::scalar(total), detail::any_needs<T>({a, b}),
                 [ida, idb, h, w, channels, tiny](Tape<T>& t, int32_t self) {
                   const T gout = t.grad(self).data[0] / static_cast<T>(channels);
                   Tensor<T> gdiff = Tensor<T>::zeros(t.value(ida).shape);
                   for (int64_t c = 0; c < channels; ++c) {
                     std::vector<T> diff(static_cast<size_t>(h * w));
                     const T* ap = t.value(ida).ptr() + c * h * w;
                     const T* bp = t.value(idb).ptr() + c * h * w;
                     for (int64_t i = 0; i < h * w; ++i) diff[static_cast<size_t>(i)] = ap[i] - bp[i];
                     const EMatC<T> d = dft2(diff.data(), h, w);
                     T mx = T(0), s3 = T(0);
                     int64_t mi = 0, mj = 0;
                     for (int64_t i = 0; i < h; ++i)
                       for (int64_t j = 0; j < w; ++j) {
                         const T m = std::abs(d(i, j));
                         if (m > mx) {
                           mx = m;
                           mi = i;
                           mj = j;
                         }
                         s3 += m * m * m;
                       }
                     if (mx <= tiny) continue;
                     const T hw = static_cast<T>(h * w);
                     EMatC<T> g(h, w);
                     for (int64_t i = 0; i < h; ++i)
                       for (int64_t j = 0; j < w; ++j) {
                         const T m = std::abs(d(i, j));
                         g(i, j) = d(i, j) * (T(3) * m / (hw * mx));
                       }
                     // subgradient of max through the (first) argmax bin
                     g(mi, mj) += d(mi, mj) / mx * (-s3 / (hw * mx * mx));
                     std::vector<T> gd(static_cast<size_t>(h * w));
                     dft2_adjoint_real(g, gd.data(), h, w);
                     T* dst = gdiff.ptr() + c * h * w;
                     for (int64_t i = 0; i < h * w; ++i) dst[i] = gd[static_cast<size_t>(i)] * gout;
                   }
                   if (t.needs_grad(ida)) t.accum_grad(ida, gdiff);
                   if (t.needs_grad(idb)) {
                     for (auto& v : gdiff.data) v = -v;
                     t.accum_grad(idb, gdiff);
                   }
                 });
}

}  // namespace ocvp::core
