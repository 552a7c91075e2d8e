// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Paired RAW / event sensor simulation from a shared radiance sequence.

#pragma once

#include <evraw/core.hpp>

#include <cstdint>
#include <utility>
#include <vector>

namespace evraw::sim {

/// Time-indexed per-pixel photoelectron counts (linear light).
class RadianceSequence {
 public:
  RadianceSequence() = default;
  /// Validates: strictly increasing times, equal frame shapes, finite I >= 0.
  RadianceSequence(std::vector<TimeNs> frame_times, std::vector<Image> frames);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return frames_.size(); }
  const std::vector<TimeNs>& frame_times() const { return times_; }
  const std::vector<Image>& frames() const { return frames_; }
  const Image& frame(std::size_t i) const { return frames_.at(i); }
  TimeNs time(std::size_t i) const { return times_.at(i); }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<TimeNs> times_;
  std::vector<Image> frames_;
};

struct RawNoiseParams {
  double gain = 1.0;         ///< K, DN per electron
  double read_sigma = 0.0;   ///< DN
  double quant_step = 0.0;   ///< DN; 0 disables quantization
  double black_level = 0.0;  ///< DN pedestal added before the ADC clamp
  bool shot_noise = true;
  bool read_noise = true;
  bool quantization = true;

  void validate() const;
};

/// Single-channel linear RAW frame. `values` are black-level subtracted DN.
struct RawFrame {
  Image values;
  double gain = 1.0;
  double black_level = 0.0;
  TimeNs timestamp = 0;
  TimeNs exposure_ns = 0;

  int width() const { return static_cast<int>(values.cols()); }
  int height() const { return static_cast<int>(values.rows()); }
};

enum class Provenance : std::uint8_t { kUnknown = 0, kSignal = 1, kNoise = 2 };

struct Event {
  TimeNs t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;
  Provenance provenance = Provenance::kUnknown;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Total order used for storage: (t, y, x, p, provenance).
bool event_less(const Event& a, const Event& b);

struct EventStream {
  int width = 0;
  int height = 0;
  double contrast_threshold = 0.2;
  std::vector<Event> events;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  void sort();
  /// Throws InputDomainError when ordering, bounds or polarity is violated.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Background-activity rate: rate(x, y) = base_rate + slope * illumination(x, y).
struct BaRateModel {
  double base_rate = 0.0;  ///< events / pixel / second
  double slope = 0.0;      ///< events / pixel / second per DN

  void validate() const;
};

/// Smoothed per-pixel brightness (DN).
struct IlluminationMap {
  Image values;
};

struct VoxelGrid {
  TimeNs t0 = 0;
  TimeNs t1 = 0;
  std::vector<Image> bins;

  int num_bins() const { return static_cast<int>(bins.size()); }
  /// Sum of |bin| over temporal bins.
  Image magnitude() const;
  /// Signed sum over temporal bins.
  Image collapsed() const;
};

/// Default photoreceptor bias (DN-equivalent) used when none is configured.
inline constexpr double kDefaultPhotoreceptorBias = 1.0;

RawFrame clean_raw(const Image& radiance, double gain, TimeNs timestamp = 0);

/// K * Poisson(I) + N(0, read_sigma^2), offset by the black level, quantized,
/// clamped at 0 (ADC floor), then black-level subtracted.
RawFrame synthesize_raw(const Image& radiance, const RawNoiseParams& params, std::uint64_t seed,
                        TimeNs timestamp = 0);

IlluminationMap gaussian_blur_illumination(const RawFrame& raw, double sigma_px);

/// Threshold-crossing events on log(I + b_pr), linearly interpolated between frames.
EventStream generate_ideal_events(const RadianceSequence& radiance, double contrast_threshold,
                                  double photoreceptor_bias = kDefaultPhotoreceptorBias);

/// Adds Poisson BA events tagged Provenance::kNoise over [t0, t1).
EventStream inject_ba_noise(const EventStream& events, const IlluminationMap& illum,
                            const BaRateModel& model, std::pair<TimeNs, TimeNs> window,
                            std::uint64_t seed);

/// Signed per-pixel sum of polarities with t in [t0, t1).
EventCountMap accumulate_events(const EventStream& events, TimeNs t0, TimeNs t1);

/// Bilinear-in-time voxel grid over [t0, t1); bin centers at t0 + i (t1 - t0) / (B - 1).
VoxelGrid voxelize(const EventStream& events, int num_bins, std::pair<TimeNs, TimeNs> window);

}  // namespace evraw::sim
