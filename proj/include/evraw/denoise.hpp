// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Event / RAW collaborative noise suppression.
//
// Both denoisers are deterministic classical filters that take the other
// modality as guidance: the event filter narrows its temporal support where
// the RAW frame predicts dense background activity, and the RAW filter
// relaxes smoothing along event edges. The intensity-consistency objective
// ties the two outputs together through the log-ratio identity between
// accumulated events and consecutive clean frames.

#pragma once

#include <evraw/core.hpp>
#include <evraw/sensor.hpp>

#include <utility>
#include <vector>

namespace evraw::denoise {

struct EventFilterParams {
  int neighbor_radius = 1;        ///< Chebyshev radius r (px)
  int min_support = 2;            ///< k: other events required inside the neighborhood
  TimeNs base_window = 3'000'000; ///< dt0 (ns)
  double adaptivity = 0.08;       ///< gamma_f, per (event / pixel / second)

  void validate() const;
  /// Effective half-window dt0 / (1 + gamma_f * rate).
  TimeNs window_for_rate(double rate) const;
};

struct ImageFilterParams {
  double spatial_sigma = 2.0;    ///< sigma_s (px)
  double range_sigma = 30.0;     ///< sigma_r (DN); +inf disables the range term
  double edge_attenuation = 0.9; ///< beta_e in [0, 1]

  void validate() const;
};

/// Normalized event-edge strength in [0, 1].
struct EdgeMap {
  Image values;
};

struct ConsistencyConfig {
  double contrast_scale = 0.2;  ///< C
  double epsilon = 1e-6;        ///< DN

  void validate() const;
};

/// lambda0 + slope * illumination, pointwise.
RateMap estimate_ba_rate(const sim::IlluminationMap& illum, const sim::BaRateModel& model);

/// Least-squares line through (illumination, measured BA density) pairs.
/// Negative intercept / slope estimates are clamped to zero.
sim::BaRateModel fit_ba_rate_model(const std::vector<double>& illumination,
                                   const std::vector<double>& density);

/// Keeps an event iff at least `min_support` other events lie within the
/// spatial Chebyshev radius and within +/- the pixel's adaptive time window.
/// Output is a subsequence of the input (order and provenance preserved).
sim::EventStream denoise_events(const sim::EventStream& events, const sim::IlluminationMap& illum,
                                const sim::BaRateModel& model, const EventFilterParams& params);

/// |signed count| over the window, Gaussian-blurred, divided by the 99th
/// percentile and clipped to [0, 1].
EdgeMap event_edge_map(const sim::EventStream& denoised, std::pair<TimeNs, TimeNs> window,
                       double blur_sigma);

/// Joint bilateral filter guided by G = max(normalized raw gradient, edge).
///
/// Spatial sigma at pixel p is sigma_s * (1 - beta_e * edge(p)). The range
/// term compares raw intensities and the guidance G scaled into DN by the
/// robust dynamic range of the pre-smoothed frame; with sigma_r = +inf and
/// beta_e = 0 the filter is exactly the Gaussian blur.
sim::RawFrame denoise_raw(const sim::RawFrame& raw, const EdgeMap& edge,
                          const ImageFilterParams& params);

/// mean | E * C - log((R_t + eps) / (R_prev + eps)) |.
double intensity_consistency_loss(const EventCountMap& accum, const sim::RawFrame& raw_t,
                                  const sim::RawFrame& raw_prev, const ConsistencyConfig& cfg);

/// One (accumulated events, frame, previous frame) observation for fitting C.
struct ConsistencySample {
  EventCountMap accum;
  Image raw_t;
  Image raw_prev;
};

/// Closed-form least squares C* = sum(E * logratio) / sum(E^2) over pixels with E != 0.
/// Throws NoSignalError when every accumulated count is zero.
double fit_contrast_scale(const std::vector<ConsistencySample>& samples, double epsilon = 1e-6);

}  // namespace evraw::denoise
