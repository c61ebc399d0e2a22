// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <complex>
#include <map>

#include "ocvp/core/tensor.hpp"

namespace ocvp::core {

template <class T>
using EMatC = Eigen::Matrix<std::complex<T>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Orthonormal DFT matrix of size n (symmetric): W[j,k] = exp(-2*pi*i*j*k/n)/sqrt(n).
/// Cached per size; single-threaded use.
template <class T>
const EMatC<T>& dft_matrix(int64_t n) {
  static std::map<int64_t, EMatC<T>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  EMatC<T> w(n, n);
  const double two_pi = 6.283185307179586476925286766559;
  for (int64_t j = 0; j < n; ++j)
    for (int64_t k = 0; k < n; ++k) {
      const double ang = -two_pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
      w(j, k) = std::complex<T>(static_cast<T>(std::cos(ang) / std::sqrt(static_cast<double>(n))),
                                static_cast<T>(std::sin(ang) / std::sqrt(static_cast<double>(n))));
    }
  return cache.emplace(n, std::move(w)).first->second;
}

/// 2D orthonormal DFT of a real H x W map: F = W_H * X * W_W^T.
template <class T>
EMatC<T> dft2(const T* x, int64_t h, int64_t w) {
  EMatC<T> xc(h, w);
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) xc(i, j) = std::complex<T>(x[i * w + j], T(0));
  return dft_matrix<T>(h) * xc * dft_matrix<T>(w).transpose();
}

/// Adjoint of dft2 applied to a complex gradient: real( conj(W_H) * G * conj(W_W) ).
template <class T>
void dft2_adjoint_real(const EMatC<T>& g, T* out, int64_t h, int64_t w) {
  const EMatC<T> res = dft_matrix<T>(h).conjugate() * g * dft_matrix<T>(w).conjugate();
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) out[i * w + j] = res(i, j).real();
}

}  // namespace ocvp::core
