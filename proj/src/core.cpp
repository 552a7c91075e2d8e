// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/core.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef EVRAW_HAVE_OPENMP
#include <omp.h>
#endif

namespace evraw {

double percentile(const Image& img, double q) {
  if (img.size() == 0) throw InputDomainError("percentile: empty image");
  std::vector<double> v(img.data(), img.data() + img.size());
  std::sort(v.begin(), v.end());
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

void set_num_threads(int n) {
#ifdef EVRAW_HAVE_OPENMP
  omp_set_num_threads(std::max(1, n));
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef EVRAW_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace evraw
