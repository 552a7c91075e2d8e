// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include "fixtures.hpp"
#include "oracles.hpp"

#include <evraw/denoise.hpp>
#include <evraw/filters.hpp>
#include <evraw/metrics.hpp>

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace evraw;
using namespace evraw::denoise;

namespace {

double region_psnr(const Image& a, const Image& b, Eigen::Index c0, Eigen::Index c1, double peak) {
  return metrics::psnr(a.middleCols(c0, c1 - c0), b.middleCols(c0, c1 - c0), peak);
}

}  // namespace

TEST_SUITE("denoise") {

TEST_CASE("estimate_ba_rate") {
  const sim::IlluminationMap illum{Image::Random(6, 5).abs() * 50.0};
  CHECK((estimate_ba_rate(illum, {2.5, 0.0}) == 2.5).all());
  const Image r1 = estimate_ba_rate(illum, {0.0, 0.3});
  const Image r2 = estimate_ba_rate({illum.values * 2.0}, {0.0, 0.3});
  CHECK((r2 - 2.0 * r1).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(estimate_ba_rate(illum, {-1.0, 0.0}), InputDomainError);
}

TEST_CASE("fit_ba_rate_model recovers the injected slope from gray cards") {
  const sim::BaRateModel truth{2.0, 0.5};
  const auto d = fixture::gray_card_density({5, 10, 20, 40, 60, 80, 120, 160}, 64, 64, truth, 200'000'000, 3);
  const sim::BaRateModel fit = fit_ba_rate_model(d.illumination, d.density);
  CHECK(std::abs(fit.slope - truth.slope) <= 0.10 * truth.slope);
  CHECK_THROWS_AS(fit_ba_rate_model({1.0}, {1.0}), InputDomainError);
  CHECK_THROWS_AS(fit_ba_rate_model({1.0, 1.0}, {1.0, 2.0}), NoSignalError);
  const sim::BaRateModel clamped = fit_ba_rate_model({1.0, 2.0}, {2.0, 1.0});
  CHECK(clamped.slope == 0.0);
}

TEST_CASE("event filter params") {
  EventFilterParams p;
  p.base_window = 1000;
  p.adaptivity = 0.5;
  CHECK(p.window_for_rate(0.0) == 1000);
  CHECK(p.window_for_rate(2.0) == 500);
  p.adaptivity = 0.0;
  CHECK(p.window_for_rate(1e9) == 1000);
  p.min_support = 0;
  CHECK_THROWS_AS(p.validate(), InputDomainError);
}

TEST_CASE("denoise_events: empty stream and subsequence property") {
  const sim::EventStream empty{8, 8, 0.2, {}};
  CHECK(denoise_events(empty, {Image::Zero(8, 8)}, {1.0, 0.1}, {}).empty());

  const pipeline::PipelineConfig cfg;
  const sim::Scene sc = sim::make_scene(cfg.scene, 42);
  const sim::EventStream clean = sim::generate_ideal_events(sc.radiance, 0.2);
  const sim::IlluminationMap illum{Image::Constant(64, 64, 30.0)};
  const sim::EventStream noisy = sim::inject_ba_noise(clean, illum, {5.0, 1.0}, {0, cfg.scene.duration_ns}, 1);
  const sim::EventStream out = denoise_events(noisy, illum, {5.0, 1.0}, {});
  out.validate();
  CHECK(out.size() < noisy.size());
  // Ordered subsequence of the input.
  std::size_t j = 0;
  for (const sim::Event& e : out.events) {
    while (j < noisy.size() && !(noisy.events[j] == e)) ++j;
    REQUIRE(j < noisy.size());
    ++j;
  }
}

TEST_CASE("denoise_events: isolated events are removed, clustered ones kept") {
  sim::EventStream s{10, 10, 0.2, {}};
  s.events = {{100, 5, 5, 1, sim::Provenance::kSignal},
              {150, 6, 5, 1, sim::Provenance::kSignal},
              {170, 5, 6, 1, sim::Provenance::kSignal},
              {5'000'000, 1, 1, 1, sim::Provenance::kNoise}};
  s.sort();
  const sim::EventStream out = denoise_events(s, {Image::Zero(10, 10)}, {0.0, 0.0}, {});
  CHECK(out.size() == 3u);
  for (const sim::Event& e : out.events) CHECK(e.provenance == sim::Provenance::kSignal);
}

TEST_CASE("denoise_events: provenance-tag recall and removal") {
  const pipeline::PipelineConfig cfg;
  const auto score = fixture::score_event_filter(cfg, cfg.event_filter, 4, 64, 1);
  CHECK(score.recall >= 0.95);
  CHECK(score.removal.back() >= 0.90);
  auto blind = cfg.event_filter;
  blind.adaptivity = 0.0;
  const auto blind_score = fixture::score_event_filter(cfg, blind, 1, 64, 1);
  CHECK(score.removal.back() >= blind_score.removal.back());
}

TEST_CASE("event_edge_map") {
  const sim::EventStream empty{16, 12, 0.2, {}};
  CHECK((event_edge_map(empty, {0, 1000}, 1.0).values == 0.0).all());
  CHECK_THROWS_AS(event_edge_map(empty, {5, 5}, 1.0), InputDomainError);

  // Vertical bright/dark edge translating by a few pixels.
  const int w = 48, h = 32;
  std::vector<TimeNs> times;
  std::vector<Image> frames;
  for (int f = 0; f < 9; ++f) {
    times.push_back(f * 1'000'000);
    Image img(h, w);
    const double edge = 20.0 + 0.5 * f;
    for (int x = 0; x < w; ++x) img.col(x).setConstant(x + 0.5 < edge ? 10.0 : 80.0);
    frames.push_back(img);
  }
  const sim::EventStream ev = sim::generate_ideal_events({times, frames}, 0.2);
  const Image edge = event_edge_map(ev, {0, 8'000'001}, 1.0).values;
  CHECK(edge.maxCoeff() <= 1.0);
  CHECK(edge.minCoeff() >= 0.0);
  const double off = percentile(edge, 50.0);
  const Eigen::Index ridge = [&] {
    Eigen::Index best = 0;
    edge.colwise().mean().maxCoeff(&best);
    return best;
  }();
  CHECK(ridge >= 19);
  CHECK(ridge <= 24);
  for (int y = 0; y < h; ++y) {
    Eigen::Index arg = 0;
    edge.row(y).maxCoeff(&arg);
    CHECK(std::abs(arg - ridge) <= 2);
    CHECK(edge(y, ridge) >= 10.0 * std::max(off, 1e-12));
  }
}

TEST_CASE("denoise_raw degenerates to the Gaussian blur") {
  const Image img = (Image::Random(20, 17) + 1.0) * 40.0;
  const sim::RawFrame raw{img, 1.0};
  const EdgeMap edge{Image::Random(20, 17).abs()};
  const ImageFilterParams p{1.7, std::numeric_limits<double>::infinity(), 0.0};
  const Image out = denoise_raw(raw, edge, p).values;
  const Image ref = sim::gaussian_blur_illumination(raw, 1.7).values;
  CHECK((out - ref).abs().maxCoeff() <= 1e-6);
  CHECK((out - oracle::dense_correlate(img, oracle::gaussian_kernel_2d(1.7))).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("denoise_raw preserves constants and rejects mismatched shapes") {
  const sim::RawFrame flat{Image::Constant(16, 16, 37.5), 1.0};
  const EdgeMap edge{Image::Random(16, 16).abs()};
  CHECK((denoise_raw(flat, edge, {}).values - 37.5).abs().maxCoeff() <= 1e-9);
  CHECK_THROWS_AS(denoise_raw(flat, EdgeMap{Image::Zero(15, 16)}, {}), InputDomainError);
  CHECK_THROWS_AS(denoise_raw(flat, edge, {0.0, 1.0, 0.5}), InputDomainError);
}

TEST_CASE("denoise_raw: Monte-Carlo residual variance on a flat frame") {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> n(0.0, 10.0);
  const int side = 128;
  Image noisy(side, side);
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy.data()[i] = 100.0 + n(gen);
  const Image out = denoise_raw({noisy, 1.0}, EdgeMap{Image::Zero(side, side)}, {}).values;
  const double var = oracle::sample_variance(oracle::flatten(out - 100.0));
  CHECK(var <= 0.25 * 100.0);
}

TEST_CASE("denoise_raw: event edges preserve a noisy step") {
  std::mt19937_64 gen(23);
  std::normal_distribution<double> n(0.0, 10.0);
  const int w = 64, h = 64, step = 32;
  Image clean(h, w), noisy(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      clean(y, x) = x < step ? 20.0 : 80.0;
      noisy(y, x) = clean(y, x) + n(gen);
    }
  }
  // Events fired by the edge sweeping over its last two columns.
  sim::EventStream ev{w, h, 0.2, {}};
  for (int y = 0; y < h; ++y) {
    for (int k = 0; k < 7; ++k) {
      ev.events.push_back({1000 * k, static_cast<std::uint16_t>(step - 1), static_cast<std::uint16_t>(y), 1,
                           sim::Provenance::kSignal});
      ev.events.push_back({1000 * k + 1, static_cast<std::uint16_t>(step), static_cast<std::uint16_t>(y), 1,
                           sim::Provenance::kSignal});
    }
  }
  ev.sort();
  const EdgeMap edge = event_edge_map(ev, {0, 10'000}, 1.0);
  const ImageFilterParams p{};
  const Image assisted = denoise_raw({noisy, 1.0}, edge, p).values;
  const Image blind = denoise_raw({noisy, 1.0}, EdgeMap{Image::Zero(h, w)}, {p.spatial_sigma, p.range_sigma, 0.0}).values;
  const Image blurred = gaussian_blur(noisy, p.spatial_sigma);

  const double psnr_assisted = region_psnr(assisted, clean, step - 4, step + 4, 100.0);
  const double psnr_blur = region_psnr(blurred, clean, step - 4, step + 4, 100.0);
  CHECK(psnr_assisted >= psnr_blur + 2.0);

  const auto edge_gradient = [&](const Image& img) {
    return (img.col(step) - img.col(step - 1)).mean();
  };
  CHECK(edge_gradient(assisted) >= edge_gradient(blind));
}

TEST_CASE("intensity_consistency_loss") {
  const ConsistencyConfig cfg{0.2, 1e-6};
  const Image base = (Image::Random(8, 8) + 2.0) * 30.0;
  const sim::RawFrame prev{base, 1.0};
  CHECK(intensity_consistency_loss(Image::Zero(8, 8), prev, prev, cfg) == 0.0);

  const sim::RawFrame next{base * std::exp(0.2), 1.0};
  CHECK(intensity_consistency_loss(Image::Ones(8, 8), next, prev, cfg) < 1e-6);

  const double before = intensity_consistency_loss(Image::Ones(8, 8), next, prev, cfg);
  sim::RawFrame bumped = next;
  bumped.values(3, 4) *= std::exp(0.2);
  const double after = intensity_consistency_loss(Image::Ones(8, 8), bumped, prev, cfg);
  CHECK(std::abs((after - before) - 0.2 / 64.0) <= 1e-9);

  sim::RawFrame negative = prev;
  negative.values(0, 0) = -1.0;
  CHECK_THROWS_AS(intensity_consistency_loss(Image::Zero(8, 8), negative, prev, cfg), InputDomainError);
  CHECK_THROWS_AS(intensity_consistency_loss(Image::Zero(7, 8), prev, prev, cfg), InputDomainError);
}

TEST_CASE("fit_contrast_scale") {
  CHECK(fit_contrast_scale({{Image::Constant(1, 1, 2.0), Image::Constant(1, 1, std::exp(0.5)), Image::Ones(1, 1)}},
                           1e-300) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK_THROWS_AS(fit_contrast_scale({{Image::Zero(3, 3), Image::Ones(3, 3), Image::Ones(3, 3)}}), NoSignalError);

  // Exact data: log ratio = n C.
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<int> d(-4, 4);
  Image n(10, 10);
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = d(gen);
  const Image prev = (Image::Random(10, 10) + 2.0) * 50.0;
  const Image next = prev * (0.2 * n).exp();
  const double c = fit_contrast_scale({{n, next, prev}}, 1e-300);
  CHECK(std::abs(c - 0.2) <= 1e-12);

  // Log ratio scaled by s, counts fixed -> C scaled by s.
  const Image next3 = prev * (0.6 * n).exp();
  CHECK(fit_contrast_scale({{n, next3, prev}}, 1e-300) == doctest::Approx(3.0 * c).epsilon(1e-12));
  // Counts scaled by s and log ratio scaled by s -> C unchanged.
  CHECK(fit_contrast_scale({{3.0 * n, next3, prev}}, 1e-300) == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("consistency round trip through the event simulator") {
  // Final / first frame ratios are exact multiples of e^C; intermediate
  // frames wander, so the generator has to track its reference level.
  const double c = 0.2;
  std::mt19937_64 gen(9);
  std::uniform_int_distribution<int> d(-5, 5);
  const int w = 24, h = 20;
  Image n(h, w);
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = d(gen);
  const Image first = (Image::Random(h, w) + 2.0) * 20.0;
  const Image wobble = Image::Random(h, w) * 0.3;
  std::vector<TimeNs> times;
  std::vector<Image> frames;
  for (int k = 0; k < 6; ++k) {
    const double tau = k / 5.0;
    times.push_back(k * 2'000'000);
    frames.push_back(first * (c * n * tau + wobble * std::sin(3.14159265358979 * tau)).exp());
  }
  frames.back() = first * (c * n).exp();
  const sim::EventStream ev = sim::generate_ideal_events({times, frames}, c, 0.0);
  const Image acc = sim::accumulate_events(ev, 0, times.back() + 1);
  CHECK((acc == n).all());
  const sim::RawFrame prev{first, 1.0}, last{frames.back(), 1.0};
  CHECK(intensity_consistency_loss(acc, last, prev, {c, 1e-6}) <= 1e-6);
  CHECK(std::abs(fit_contrast_scale({{acc, frames.back(), first}}) - c) <= 0.01 * c);
}

}  // TEST_SUITE
