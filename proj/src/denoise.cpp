// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/denoise.hpp>

#include <evraw/filters.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace evraw::denoise {

namespace {

/// Divides by the 99th percentile (falling back to the max) and clips to [0, 1].
Image normalize_p99(const Image& img) {
  double scale = percentile(img, 99.0);
  if (!(scale > 0.0)) scale = img.maxCoeff();
  if (!(scale > 0.0)) return Image::Zero(img.rows(), img.cols());
  return (img / scale).min(1.0).max(0.0);
}

}  // namespace

void EventFilterParams::validate() const {
  if (neighbor_radius < 0) throw InputDomainError("EventFilterParams: radius must be >= 0");
  if (min_support < 1) throw InputDomainError("EventFilterParams: min_support must be >= 1");
  if (base_window <= 0) throw InputDomainError("EventFilterParams: base_window must be > 0");
  if (!(adaptivity >= 0.0)) throw InputDomainError("EventFilterParams: adaptivity must be >= 0");
}

TimeNs EventFilterParams::window_for_rate(double rate) const {
  return std::llround(static_cast<double>(base_window) / (1.0 + adaptivity * std::max(rate, 0.0)));
}

void ImageFilterParams::validate() const {
  if (!(spatial_sigma > 0.0)) throw InputDomainError("ImageFilterParams: spatial_sigma must be > 0");
  if (!(range_sigma > 0.0)) throw InputDomainError("ImageFilterParams: range_sigma must be > 0");
  if (!(edge_attenuation >= 0.0 && edge_attenuation <= 1.0)) {
    throw InputDomainError("ImageFilterParams: edge_attenuation must lie in [0, 1]");
  }
}

void ConsistencyConfig::validate() const {
  if (!(contrast_scale > 0.0)) throw InputDomainError("ConsistencyConfig: C must be > 0");
  if (!(epsilon > 0.0)) throw InputDomainError("ConsistencyConfig: epsilon must be > 0");
}

RateMap estimate_ba_rate(const sim::IlluminationMap& illum, const sim::BaRateModel& model) {
  model.validate();
  return model.base_rate + model.slope * illum.values.max(0.0);
}

sim::BaRateModel fit_ba_rate_model(const std::vector<double>& illumination,
                                   const std::vector<double>& density) {
  if (illumination.size() != density.size() || illumination.size() < 2) {
    throw InputDomainError("fit_ba_rate_model: need >= 2 paired observations");
  }
  const Eigen::Map<const Eigen::VectorXd> x(illumination.data(),
                                            static_cast<Eigen::Index>(illumination.size()));
  const Eigen::Map<const Eigen::VectorXd> y(density.data(), static_cast<Eigen::Index>(density.size()));
  const double mx = x.mean(), my = y.mean();
  const double sxx = (x.array() - mx).square().sum();
  if (!(sxx > 0.0)) throw NoSignalError("fit_ba_rate_model: illumination levels are all equal");
  const double slope = ((x.array() - mx) * (y.array() - my)).sum() / sxx;
  return {std::max(my - slope * mx, 0.0), std::max(slope, 0.0)};
}

sim::EventStream denoise_events(const sim::EventStream& events, const sim::IlluminationMap& illum,
                                const sim::BaRateModel& model, const EventFilterParams& params) {
  params.validate();
  sim::EventStream out;
  out.width = events.width;
  out.height = events.height;
  out.contrast_threshold = events.contrast_threshold;
  if (events.empty()) return out;
  if (illum.values.rows() != events.height || illum.values.cols() != events.width) {
    throw InputDomainError("denoise_events: illumination / event dimensions differ");
  }
  const RateMap rate = estimate_ba_rate(illum, model);
  const int w = events.width, h = events.height;

  // Per-pixel timestamp lists (CSR); input is time-sorted so each list is too.
  std::vector<std::size_t> offsets(static_cast<std::size_t>(w) * h + 1, 0);
  for (const sim::Event& e : events.events) ++offsets[static_cast<std::size_t>(e.y) * w + e.x + 1];
  std::partial_sum(offsets.begin(), offsets.end(), offsets.begin());
  std::vector<TimeNs> times(events.size());
  {
    std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
    for (const sim::Event& e : events.events) times[cursor[static_cast<std::size_t>(e.y) * w + e.x]++] = e.t;
  }

  const int r = params.neighbor_radius;
  const auto n = static_cast<std::ptrdiff_t>(events.size());
  std::vector<char> keep(events.size(), 0);
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const sim::Event& e = events.events[i];
    const TimeNs window = params.window_for_rate(rate(e.y, e.x));
    int support = -1;  // the event itself is counted once below
    for (int y = std::max(0, e.y - r); y <= std::min(h - 1, e.y + r) && support < params.min_support; ++y) {
      for (int x = std::max(0, e.x - r); x <= std::min(w - 1, e.x + r); ++x) {
        const std::size_t pix = static_cast<std::size_t>(y) * w + x;
        const auto first = times.begin() + static_cast<std::ptrdiff_t>(offsets[pix]);
        const auto last = times.begin() + static_cast<std::ptrdiff_t>(offsets[pix + 1]);
        support += static_cast<int>(std::upper_bound(first, last, e.t + window) -
                                    std::lower_bound(first, last, e.t - window));
      }
    }
    keep[i] = support >= params.min_support;
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (keep[i]) out.events.push_back(events.events[i]);
  }
  return out;
}

EdgeMap event_edge_map(const sim::EventStream& denoised, std::pair<TimeNs, TimeNs> window,
                       double blur_sigma) {
  if (!(window.first < window.second)) throw InputDomainError("event_edge_map: empty window");
  const Image counts = sim::accumulate_events(denoised, window.first, window.second).abs();
  return {normalize_p99(gaussian_blur(counts, blur_sigma))};
}

sim::RawFrame denoise_raw(const sim::RawFrame& raw, const EdgeMap& edge,
                          const ImageFilterParams& params) {
  params.validate();
  require_same_shape(raw.values, edge.values, "denoise_raw");
  const Image& src = raw.values;
  const Eigen::Index h = src.rows(), w = src.cols();

  const Image smooth = gaussian_blur(src, params.spatial_sigma);
  const Image grad = (diff_x(smooth).square() + diff_y(smooth).square()).sqrt();
  const Image guide = normalize_p99(grad).max(edge.values);
  const double guide_scale = std::max(percentile(smooth, 99.0) - percentile(smooth, 1.0), 0.0);
  const double inv_range = std::isinf(params.range_sigma)
                               ? 0.0
                               : 1.0 / (2.0 * params.range_sigma * params.range_sigma);

  sim::RawFrame out = raw;
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const double sigma = params.spatial_sigma * (1.0 - params.edge_attenuation * edge.values(y, x));
      const int rad = gaussian_radius(sigma);
      if (rad == 0) {
        out.values(y, x) = std::max(src(y, x), 0.0);
        continue;
      }
      const double inv_spatial = 1.0 / (2.0 * sigma * sigma);
      double acc = 0.0, norm = 0.0;
      for (int dy = -rad; dy <= rad; ++dy) {
        const Eigen::Index qy = mirror_index(y + dy, h);
        for (int dx = -rad; dx <= rad; ++dx) {
          const Eigen::Index qx = mirror_index(x + dx, w);
          double weight = std::exp(-(dx * dx) * inv_spatial) * std::exp(-(dy * dy) * inv_spatial);
          if (inv_range > 0.0) {
            const double di = smooth(y, x) - smooth(qy, qx);
            const double dg = guide_scale * (guide(y, x) - guide(qy, qx));
            weight *= std::exp(-(di * di + dg * dg) * inv_range);
          }
          acc += weight * src(qy, qx);
          norm += weight;
        }
      }
      out.values(y, x) = std::max(acc / norm, 0.0);
    }
  }
  return out;
}

double intensity_consistency_loss(const EventCountMap& accum, const sim::RawFrame& raw_t,
                                  const sim::RawFrame& raw_prev, const ConsistencyConfig& cfg) {
  cfg.validate();
  require_same_shape(accum, raw_t.values, "intensity_consistency_loss");
  require_same_shape(accum, raw_prev.values, "intensity_consistency_loss");
  if ((raw_t.values < 0.0).any() || (raw_prev.values < 0.0).any()) {
    throw InputDomainError("intensity_consistency_loss: raw values must be >= 0");
  }
  const Image log_ratio = ((raw_t.values + cfg.epsilon) / (raw_prev.values + cfg.epsilon)).log();
  return (accum * cfg.contrast_scale - log_ratio).abs().mean();
}

double fit_contrast_scale(const std::vector<ConsistencySample>& samples, double epsilon) {
  if (!(epsilon > 0.0)) throw InputDomainError("fit_contrast_scale: epsilon must be > 0");
  double num = 0.0, den = 0.0;
  for (const ConsistencySample& s : samples) {
    require_same_shape(s.accum, s.raw_t, "fit_contrast_scale");
    require_same_shape(s.accum, s.raw_prev, "fit_contrast_scale");
    const Image log_ratio = ((s.raw_t + epsilon) / (s.raw_prev + epsilon)).log();
    const Image mask = (s.accum != 0.0).cast<double>();
    num += (mask * s.accum * log_ratio).sum();
    den += (mask * s.accum.square()).sum();
  }
  if (!(den > 0.0)) throw NoSignalError("fit_contrast_scale: no pixel has a nonzero event count");
  return std::max(num / den, std::numeric_limits<double>::min());
}

}  // namespace evraw::denoise
