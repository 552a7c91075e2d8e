// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/sensor.hpp>

#include <evraw/filters.hpp>
#include <evraw/rng.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <tuple>

namespace evraw::sim {

namespace {

// Slack on the trigger comparison so that a change of exactly n*C in log
// space yields n events despite rounding in log().
constexpr double kCrossingTolerance = 1e-9;

void check_radiance(const Image& radiance, const char* what) {
  if (!radiance.allFinite() || (radiance < 0.0).any()) {
    throw InputDomainError(std::string(what) + ": radiance must be finite and >= 0");
  }
}

}  // namespace

RadianceSequence::RadianceSequence(std::vector<TimeNs> frame_times, std::vector<Image> frames)
    : times_(std::move(frame_times)), frames_(std::move(frames)) {
  if (times_.size() != frames_.size()) {
    throw InputDomainError("RadianceSequence: timestamp / frame count mismatch");
  }
  if (frames_.empty()) throw InputDomainError("RadianceSequence: no frames");
  height_ = static_cast<int>(frames_.front().rows());
  width_ = static_cast<int>(frames_.front().cols());
  if (width_ <= 0 || height_ <= 0) throw InputDomainError("RadianceSequence: empty frame");
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    require_same_shape(frames_[i], frames_.front(), "RadianceSequence");
    check_radiance(frames_[i], "RadianceSequence");
    if (i > 0 && times_[i] <= times_[i - 1]) {
      throw InputDomainError("RadianceSequence: timestamps must be strictly increasing");
    }
  }
}

void RawNoiseParams::validate() const {
  if (!(gain > 0.0)) throw InputDomainError("RawNoiseParams: gain must be > 0");
  if (!(read_sigma >= 0.0)) throw InputDomainError("RawNoiseParams: read_sigma must be >= 0");
  if (!(quant_step >= 0.0)) throw InputDomainError("RawNoiseParams: quant_step must be >= 0");
  if (!(black_level >= 0.0)) throw InputDomainError("RawNoiseParams: black_level must be >= 0");
}

void BaRateModel::validate() const {
  if (!(base_rate >= 0.0) || !(slope >= 0.0)) {
    throw InputDomainError("BaRateModel: base_rate and slope must be >= 0");
  }
}

bool event_less(const Event& a, const Event& b) {
  return std::tie(a.t, a.y, a.x, a.p, a.provenance) < std::tie(b.t, b.y, b.x, b.p, b.provenance);
}

void EventStream::sort() { std::sort(events.begin(), events.end(), event_less); }

void EventStream::validate() const {
  if (width <= 0 || height <= 0) throw InputDomainError("EventStream: non-positive dimensions");
  if (!(contrast_threshold > 0.0)) throw InputDomainError("EventStream: threshold must be > 0");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (e.x >= width || e.y >= height) {
      throw InputDomainError("EventStream: event " + std::to_string(i) + " out of bounds");
    }
    if (e.p != 1 && e.p != -1) {
      throw InputDomainError("EventStream: event " + std::to_string(i) + " has bad polarity");
    }
    if (i > 0 && event_less(e, events[i - 1])) {
      throw InputDomainError("EventStream: records not sorted at " + std::to_string(i));
    }
  }
}

Image VoxelGrid::magnitude() const {
  Image m = Image::Zero(bins.empty() ? 0 : bins[0].rows(), bins.empty() ? 0 : bins[0].cols());
  for (const Image& b : bins) m += b.abs();
  return m;
}

Image VoxelGrid::collapsed() const {
  Image m = Image::Zero(bins.empty() ? 0 : bins[0].rows(), bins.empty() ? 0 : bins[0].cols());
  for (const Image& b : bins) m += b;
  return m;
}

RawFrame clean_raw(const Image& radiance, double gain, TimeNs timestamp) {
  if (!(gain > 0.0)) throw InputDomainError("clean_raw: gain must be > 0");
  check_radiance(radiance, "clean_raw");
  RawFrame out;
  out.values = gain * radiance;
  out.gain = gain;
  out.timestamp = timestamp;
  return out;
}

RawFrame synthesize_raw(const Image& radiance, const RawNoiseParams& params, std::uint64_t seed,
                        TimeNs timestamp) {
  params.validate();
  check_radiance(radiance, "synthesize_raw");
  RawFrame out;
  out.values.resize(radiance.rows(), radiance.cols());
  out.gain = params.gain;
  out.black_level = params.black_level;
  out.timestamp = timestamp;

  const Eigen::Index n = radiance.size();
  const double* in = radiance.data();
  double* dst = out.values.data();
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    double electrons = in[i];
    if (params.shot_noise && electrons > 0.0) {
      CounterRng rng(seed, stream_id(RngDomain::kShotNoise, idx));
      std::poisson_distribution<std::int64_t> poisson(electrons);
      electrons = static_cast<double>(poisson(rng));
    }
    double v = params.gain * electrons + params.black_level;
    if (params.read_noise && params.read_sigma > 0.0) {
      CounterRng rng(seed, stream_id(RngDomain::kReadNoise, idx));
      std::normal_distribution<double> normal(0.0, params.read_sigma);
      v += normal(rng);
    }
    if (params.quantization && params.quant_step > 0.0) {
      v = std::round(v / params.quant_step) * params.quant_step;
    }
    dst[i] = std::max(v, 0.0) - params.black_level;
  }
  return out;
}

IlluminationMap gaussian_blur_illumination(const RawFrame& raw, double sigma_px) {
  if (!(sigma_px >= 0.0)) throw InputDomainError("gaussian_blur_illumination: sigma must be >= 0");
  return {gaussian_blur(raw.values, sigma_px)};
}

EventStream generate_ideal_events(const RadianceSequence& radiance, double contrast_threshold,
                                  double photoreceptor_bias) {
  if (!(contrast_threshold > kCrossingTolerance)) {
    throw InputDomainError("generate_ideal_events: contrast threshold must be > 0");
  }
  if (!(photoreceptor_bias >= 0.0)) {
    throw InputDomainError("generate_ideal_events: photoreceptor bias must be >= 0");
  }
  const int w = radiance.width(), h = radiance.height();
  const std::size_t nf = radiance.size();
  std::vector<Image> log_frames(nf);
  for (std::size_t k = 0; k < nf; ++k) {
    const Image shifted = radiance.frame(k) + photoreceptor_bias;
    if ((shifted <= 0.0).any()) {
      throw InputDomainError("generate_ideal_events: I + b_pr must be > 0 in frame " +
                             std::to_string(k));
    }
    log_frames[k] = shifted.log();
  }

  const double c = contrast_threshold;
  std::vector<std::vector<Event>> per_row(h);
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int y = 0; y < h; ++y) {
    std::vector<Event>& row = per_row[y];
    for (int x = 0; x < w; ++x) {
      double ref = log_frames[0](y, x);
      for (std::size_t k = 0; k + 1 < nf; ++k) {
        const double a = log_frames[k](y, x), b = log_frames[k + 1](y, x);
        const TimeNs ta = radiance.time(k), tb = radiance.time(k + 1);
        const double dt = static_cast<double>(tb - ta);
        auto emit = [&](double target, std::int8_t p) {
          const double frac = std::clamp((target - a) / (b - a), 0.0, 1.0);
          row.push_back({ta + std::llround(frac * dt), static_cast<std::uint16_t>(x),
                         static_cast<std::uint16_t>(y), p, Provenance::kSignal});
        };
        if (b > a) {
          while (b - ref >= c - kCrossingTolerance) {
            ref += c;
            emit(ref, 1);
          }
        } else if (b < a) {
          while (ref - b >= c - kCrossingTolerance) {
            ref -= c;
            emit(ref, -1);
          }
        }
      }
    }
  }

  EventStream out;
  out.width = w;
  out.height = h;
  out.contrast_threshold = c;
  for (auto& row : per_row) out.events.insert(out.events.end(), row.begin(), row.end());
  out.sort();
  return out;
}

EventStream inject_ba_noise(const EventStream& events, const IlluminationMap& illum,
                            const BaRateModel& model, std::pair<TimeNs, TimeNs> window,
                            std::uint64_t seed) {
  model.validate();
  const auto [t0, t1] = window;
  if (!(t0 < t1)) throw InputDomainError("inject_ba_noise: window must satisfy t0 < t1");
  if (illum.values.rows() != events.height || illum.values.cols() != events.width) {
    throw InputDomainError("inject_ba_noise: illumination / event dimensions differ");
  }
  EventStream out = events;
  if (model.base_rate == 0.0 && model.slope == 0.0) return out;

  const int w = events.width, h = events.height;
  const double span_s = static_cast<double>(t1 - t0) * 1e-9;
  const auto span_ns = static_cast<std::uint64_t>(t1 - t0);
  std::vector<std::vector<Event>> per_row(h);
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double rate = model.base_rate + model.slope * std::max(illum.values(y, x), 0.0);
      const double mean = rate * span_s;
      if (!(mean > 0.0)) continue;
      CounterRng rng(seed, stream_id(RngDomain::kBaNoise, static_cast<std::uint64_t>(y) * w + x));
      std::poisson_distribution<std::int64_t> poisson(mean);
      const std::int64_t n = poisson(rng);
      for (std::int64_t i = 0; i < n; ++i) {
        const TimeNs t = t0 + static_cast<TimeNs>(rng() % span_ns);
        const std::int8_t p = (rng() >> 63) ? 1 : -1;
        per_row[y].push_back({t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), p,
                              Provenance::kNoise});
      }
    }
  }
  for (auto& row : per_row) out.events.insert(out.events.end(), row.begin(), row.end());
  out.sort();
  return out;
}

EventCountMap accumulate_events(const EventStream& events, TimeNs t0, TimeNs t1) {
  if (t0 > t1) throw InputDomainError("accumulate_events: t0 must be <= t1");
  EventCountMap acc = EventCountMap::Zero(events.height, events.width);
  for (const Event& e : events.events) {
    if (e.t >= t0 && e.t < t1) acc(e.y, e.x) += e.p;
  }
  return acc;
}

VoxelGrid voxelize(const EventStream& events, int num_bins, std::pair<TimeNs, TimeNs> window) {
  if (num_bins < 1) throw InputDomainError("voxelize: num_bins must be >= 1");
  const auto [t0, t1] = window;
  if (!(t0 < t1)) throw InputDomainError("voxelize: window must satisfy t0 < t1");
  VoxelGrid grid;
  grid.t0 = t0;
  grid.t1 = t1;
  grid.bins.assign(num_bins, Image::Zero(events.height, events.width));
  const double scale = static_cast<double>(num_bins - 1) / static_cast<double>(t1 - t0);
  for (const Event& e : events.events) {
    if (e.t < t0 || e.t >= t1) continue;
    const double pos = static_cast<double>(e.t - t0) * scale;
    const int lo = std::min(static_cast<int>(std::floor(pos)), num_bins - 1);
    const double frac = pos - lo;
    grid.bins[lo](e.y, e.x) += e.p * (1.0 - frac);
    if (frac > 0.0 && lo + 1 < num_bins) grid.bins[lo + 1](e.y, e.x) += e.p * frac;
  }
  return grid;
}

}  // namespace evraw::sim
