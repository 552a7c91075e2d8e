// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic benchmarks shared by the unit and acceptance tests.

#pragma once

#include <evraw/denoise.hpp>
#include <evraw/pipeline.hpp>
#include <evraw/scene.hpp>
#include <evraw/sensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

namespace evraw::fixture {

/// Smooth random sequence: log radiance is a sum of a few low-frequency
/// plane waves whose amplitudes drift over time.
inline sim::RadianceSequence smooth_sequence(int w, int h, int frames, TimeNs duration, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  struct Wave {
    double kx, ky, phase, a0, a1;
  };
  std::vector<Wave> waves(4);
  for (Wave& wv : waves) {
    wv = {2.0 * std::numbers::pi * (u(gen) - 0.5) / 16.0, 2.0 * std::numbers::pi * (u(gen) - 0.5) / 16.0,
          2.0 * std::numbers::pi * u(gen), 1.5 * (u(gen) - 0.5), 1.5 * (u(gen) - 0.5)};
  }
  const double base = 5.0 + 60.0 * u(gen);
  std::vector<TimeNs> times;
  std::vector<Image> imgs;
  for (int f = 0; f < frames; ++f) {
    const double tau = static_cast<double>(f) / (frames - 1);
    times.push_back(static_cast<TimeNs>(std::llround(tau * static_cast<double>(duration))));
    Image img(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double l = 0.0;
        for (const Wave& wv : waves) l += (wv.a0 + (wv.a1 - wv.a0) * tau) * std::sin(wv.kx * x + wv.ky * y + wv.phase);
        img(y, x) = base * std::exp(l);
      }
    }
    imgs.push_back(std::move(img));
  }
  return {times, imgs};
}

/// Provenance-tag scores of the event filter.
struct EventFilterScore {
  double recall = 0.0;                 ///< kept / total on clean scene streams
  std::vector<double> removal;         ///< per gray-card level on pure-BA streams
  double min_removal() const { return *std::min_element(removal.begin(), removal.end()); }
};

inline const std::vector<double>& benchmark_levels() {
  static const std::vector<double> levels{5, 10, 20, 40, 80, 160};
  return levels;
}

/// Recall: clean streams of `scenes` procedural scenes, illumination from the
/// blurred clean final frame. Removal: pure-BA gray cards (side x side) at
/// each benchmark level, `card_seeds` independent draws each.
inline EventFilterScore score_event_filter(const pipeline::PipelineConfig& cfg,
                                           const denoise::EventFilterParams& params, int scenes,
                                           int card_side, int card_seeds) {
  EventFilterScore score;
  std::size_t total = 0, kept = 0;
  for (int i = 0; i < scenes; ++i) {
    const sim::Scene sc = sim::make_scene(cfg.scene, 100 + i);
    const sim::EventStream clean =
        sim::generate_ideal_events(sc.radiance, cfg.contrast_threshold, cfg.photoreceptor_bias);
    const sim::IlluminationMap illum = sim::gaussian_blur_illumination(
        sim::clean_raw(sc.radiance.frame(sc.radiance.size() - 1), cfg.raw_noise.gain), cfg.illumination_sigma);
    total += clean.size();
    kept += denoise::denoise_events(clean, illum, cfg.ba, params).size();
  }
  score.recall = static_cast<double>(kept) / static_cast<double>(total);

  const TimeNs span = cfg.scene.duration_ns;
  for (double level : benchmark_levels()) {
    std::size_t injected = 0, survived = 0;
    for (int s = 0; s < card_seeds; ++s) {
      const sim::Scene card = sim::make_gray_card(card_side, card_side, {level}, span);
      const sim::RawFrame gt = sim::clean_raw(card.radiance.frame(0), cfg.raw_noise.gain);
      const sim::EventStream empty{card_side, card_side, cfg.contrast_threshold, {}};
      const sim::EventStream noise =
          sim::inject_ba_noise(empty, sim::IlluminationMap{gt.values}, cfg.ba, {0, span}, 7 + s);
      injected += noise.size();
      survived += denoise::denoise_events(noise, sim::gaussian_blur_illumination(gt, cfg.illumination_sigma),
                                          cfg.ba, params).size();
    }
    score.removal.push_back(1.0 - static_cast<double>(survived) / static_cast<double>(injected));
  }
  return score;
}

/// Measured BA density (events / pixel / second) per region of a gray card.
struct GrayCardDensity {
  std::vector<double> illumination;
  std::vector<double> density;
};

inline GrayCardDensity gray_card_density(const std::vector<double>& levels, int patch_width, int height,
                                         const sim::BaRateModel& model, TimeNs span, std::uint64_t seed) {
  const int n = static_cast<int>(levels.size());
  const sim::Scene card = sim::make_gray_card(patch_width * n, height, levels, span);
  const sim::RawFrame gt = sim::clean_raw(card.radiance.frame(0), 1.0);
  const sim::EventStream empty{patch_width * n, height, 0.2, {}};
  const sim::EventStream ba = sim::inject_ba_noise(empty, sim::IlluminationMap{gt.values}, model, {0, span}, seed);
  std::vector<double> counts(n, 0.0);
  for (const sim::Event& e : ba.events) counts[card.regions(e.y, e.x)] += 1.0;
  GrayCardDensity out;
  for (int r = 0; r < n; ++r) {
    out.illumination.push_back(levels[r]);
    out.density.push_back(counts[r] / (static_cast<double>(patch_width) * height) / (static_cast<double>(span) * 1e-9));
  }
  return out;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "evraw-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace evraw::fixture
