// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Small stencil kernels shared by the simulator, the denoisers and the
// feature bank. All boundaries use half-sample mirroring (mirror_index).

#pragma once

#include <evraw/core.hpp>

#include <cmath>
#include <stdexcept>
#include <vector>

namespace evraw {

inline constexpr double kGaussianTruncation = 3.0;

inline int gaussian_radius(double sigma, double truncation = kGaussianTruncation) {
  return sigma > 0.0 ? static_cast<int>(std::ceil(truncation * sigma)) : 0;
}

/// Normalized sampled Gaussian of radius ceil(truncation * sigma); index 0 is -radius.
inline std::vector<double> gaussian_kernel(double sigma, double truncation = kGaussianTruncation) {
  const int r = gaussian_radius(sigma, truncation);
  std::vector<double> k(2 * r + 1, 1.0);
  if (r == 0) return k;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Convolve rows then columns with a symmetric 1-D kernel.
template <typename Derived>
ImageT<typename Derived::Scalar> convolve_separable(const Eigen::ArrayBase<Derived>& src,
                                                    const std::vector<double>& kernel) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index h = src.rows(), w = src.cols();
  const int r = static_cast<int>(kernel.size() / 2);
  ImageT<Scalar> tmp(h, w), out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * src(y, mirror_index(x + i, w));
      tmp(y, x) = static_cast<Scalar>(acc);
    }
  }
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += kernel[i + r] * tmp(mirror_index(y + i, h), x);
      out(y, x) = static_cast<Scalar>(acc);
    }
  }
  return out;
}

/// Separable Gaussian blur; sigma == 0 returns the input unchanged.
template <typename Derived>
ImageT<typename Derived::Scalar> gaussian_blur(const Eigen::ArrayBase<Derived>& src, double sigma) {
  if (!(sigma >= 0.0)) throw InputDomainError("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return src;
  return convolve_separable(src, gaussian_kernel(sigma));
}

/// k x k mean filter (k odd).
template <typename Derived>
ImageT<typename Derived::Scalar> box_filter(const Eigen::ArrayBase<Derived>& src, int k) {
  if (k < 1 || k % 2 == 0) throw InputDomainError("box_filter: kernel size must be odd and >= 1");
  if (k == 1) return src;
  return convolve_separable(src, std::vector<double>(k, 1.0 / k));
}

/// Horizontal derivative: central differences inside, one-sided at the borders.
template <typename Derived>
ImageT<typename Derived::Scalar> diff_x(const Eigen::ArrayBase<Derived>& src) {
  const Eigen::Index h = src.rows(), w = src.cols();
  ImageT<typename Derived::Scalar> out = ImageT<typename Derived::Scalar>::Zero(h, w);
  if (w < 2) return out;
  for (Eigen::Index y = 0; y < h; ++y) {
    out(y, 0) = src(y, 1) - src(y, 0);
    for (Eigen::Index x = 1; x + 1 < w; ++x) out(y, x) = 0.5 * (src(y, x + 1) - src(y, x - 1));
    out(y, w - 1) = src(y, w - 1) - src(y, w - 2);
  }
  return out;
}

template <typename Derived>
ImageT<typename Derived::Scalar> diff_y(const Eigen::ArrayBase<Derived>& src) {
  ImageT<typename Derived::Scalar> t = src.transpose();
  return diff_x(t).transpose();
}

/// 5-point Laplacian with mirrored borders.
template <typename Derived>
ImageT<typename Derived::Scalar> laplacian(const Eigen::ArrayBase<Derived>& src) {
  const Eigen::Index h = src.rows(), w = src.cols();
  ImageT<typename Derived::Scalar> out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      out(y, x) = src(mirror_index(y - 1, h), x) + src(mirror_index(y + 1, h), x) +
                  src(y, mirror_index(x - 1, w)) + src(y, mirror_index(x + 1, w)) - 4.0 * src(y, x);
    }
  }
  return out;
}

/// 3x3 Sobel responses with mirrored borders.
template <typename Derived>
void sobel(const Eigen::ArrayBase<Derived>& src, ImageT<typename Derived::Scalar>& gx,
           ImageT<typename Derived::Scalar>& gy) {
  const Eigen::Index h = src.rows(), w = src.cols();
  gx.resize(h, w);
  gy.resize(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    const Eigen::Index ym = mirror_index(y - 1, h), yp = mirror_index(y + 1, h);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index xm = mirror_index(x - 1, w), xp = mirror_index(x + 1, w);
      gx(y, x) = (src(ym, xp) + 2.0 * src(y, xp) + src(yp, xp)) -
                 (src(ym, xm) + 2.0 * src(y, xm) + src(yp, xm));
      gy(y, x) = (src(yp, xm) + 2.0 * src(yp, x) + src(yp, xp)) -
                 (src(ym, xm) + 2.0 * src(ym, x) + src(ym, xp));
    }
  }
}

}  // namespace evraw
