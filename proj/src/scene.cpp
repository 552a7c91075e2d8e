// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/scene.hpp>

#include <evraw/rng.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace evraw::sim {

namespace {

struct Grating {
  double cos_theta;
  double sin_theta;
  double period;
  double phase;
};

/// Smoothed square wave in [0, 1].
double square_wave(const Grating& g, double u, double v) {
  const double arg = 2.0 * std::numbers::pi * (u * g.cos_theta + v * g.sin_theta) / g.period + g.phase;
  return 0.5 + 0.5 * std::tanh(3.0 * std::sin(arg));
}

}  // namespace

Scene make_scene(const SceneSpec& spec, std::uint64_t seed) {
  if (spec.width < 3 || spec.height < 1 || spec.num_frames < 2 || spec.duration_ns <= 0) {
    throw InputDomainError("make_scene: invalid scene geometry");
  }
  CounterRng rng(seed, stream_id(RngDomain::kScene, 0));
  std::array<int, 3> order{kBrightTextured, kDarkTextured, kDarkSmooth};
  for (int i = 2; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  // Band boundaries in scene coordinates, each band at least a quarter wide.
  const double w = spec.width;
  const double b1 = w * (0.25 + 0.15 * rng.uniform());
  const double b2 = b1 + w * (0.25 + 0.15 * rng.uniform());
  const std::array<double, 2> cuts{b1, b2};

  std::array<Grating, 2> gratings{};
  for (Grating& g : gratings) {
    const double theta = std::numbers::pi * (0.1 + 0.3 * rng.uniform()) * (rng.uniform() < 0.5 ? 1 : -1);
    g = {std::cos(theta), std::sin(theta), 6.0 + 6.0 * rng.uniform(), 2.0 * std::numbers::pi * rng.uniform()};
  }
  const double tilt = 0.3 * (rng.uniform() - 0.5);
  const double bright = spec.bright_electrons * (0.8 + 0.4 * rng.uniform());
  const double dark = spec.dark_electrons * (0.8 + 0.4 * rng.uniform());
  const double k = spec.texture_contrast;

  auto band_of = [&](double u) { return u < cuts[0] ? 0 : (u < cuts[1] ? 1 : 2); };
  auto radiance_at = [&](double u, double v) {
    const int region = order[band_of(u)];
    const double tex = 0.5 * (square_wave(gratings[0], u, v) + square_wave(gratings[1], u, v));
    switch (region) {
      case kBrightTextured:
        return bright * (1.0 + (k - 1.0) * tex);
      case kDarkTextured:
        return dark * (1.0 + (k - 1.0) * tex);
      default:
        return dark * (1.5 + tilt * (v / spec.height - 0.5));
    }
  };

  std::vector<TimeNs> times(spec.num_frames);
  std::vector<Image> frames(spec.num_frames, Image(spec.height, spec.width));
  for (int f = 0; f < spec.num_frames; ++f) {
    const double tau = static_cast<double>(f) / (spec.num_frames - 1);
    times[f] = static_cast<TimeNs>(std::llround(tau * static_cast<double>(spec.duration_ns)));
    const double shift = spec.motion_px * tau;
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) frames[f](y, x) = radiance_at(x + 0.5 - shift, y + 0.5);
    }
  }
  LabelMap labels(spec.height, spec.width);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) labels(y, x) = order[band_of(x + 0.5 - spec.motion_px)];
  }
  return {RadianceSequence(std::move(times), std::move(frames)), std::move(labels)};
}

Scene make_gray_card(int width, int height, const std::vector<double>& levels, TimeNs duration_ns) {
  if (levels.empty() || width < static_cast<int>(levels.size()) || height < 1 || duration_ns <= 0) {
    throw InputDomainError("make_gray_card: invalid geometry");
  }
  const int n = static_cast<int>(levels.size());
  Image frame(height, width);
  LabelMap labels(height, width);
  for (int x = 0; x < width; ++x) {
    const int patch = std::min(x * n / width, n - 1);
    frame.col(x).setConstant(levels[patch]);
    labels.col(x).setConstant(patch);
  }
  return {RadianceSequence({0, duration_ns}, {frame, frame}), std::move(labels)};
}

}  // namespace evraw::sim
