// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <evraw/fusion.hpp>
#include <evraw/metrics.hpp>
#include <evraw/pipeline.hpp>

#include <doctest.h>

#include <cmath>
#include <random>

using namespace evraw;
using namespace evraw::fusion;

namespace {

/// Central differences inside, one-sided at the two borders.
Image oracle_dx(const Image& img) {
  Image out(img.rows(), img.cols());
  const Eigen::Index w = img.cols();
  for (Eigen::Index y = 0; y < img.rows(); ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      if (x == 0) out(y, x) = img(y, 1) - img(y, 0);
      else if (x == w - 1) out(y, x) = img(y, w - 1) - img(y, w - 2);
      else out(y, x) = 0.5 * (img(y, x + 1) - img(y, x - 1));
    }
  }
  return out;
}

void check_against_oracle(const FeatureMap& f, const Image& img) {
  REQUIRE(f.channels() == kNumFeatureChannels);
  Image lap(3, 3);
  lap << 0, 1, 0, 1, -4, 1, 0, 1, 0;
  const Image dy = oracle_dx(Image(img.transpose())).transpose();
  CHECK((f.channel(kIntensity) - img).abs().maxCoeff() <= 1e-12);
  CHECK((f.channel(kGradX) - oracle_dx(img)).abs().maxCoeff() <= 1e-9);
  CHECK((f.channel(kGradY) - dy).abs().maxCoeff() <= 1e-9);
  CHECK((f.channel(kLaplacian) - oracle::dense_correlate(img, lap)).abs().maxCoeff() <= 1e-9);
  Image prev = img;
  const double sigmas[] = {1.0, 2.0, 4.0, 8.0};
  for (int b = 0; b < 4; ++b) {
    const Image next = oracle::dense_correlate(img, oracle::gaussian_kernel_2d(sigmas[b]));
    CHECK((f.channel(kBand0 + b) - (prev - next)).abs().maxCoeff() <= 1e-9);
    prev = next;
  }
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("snr_map closed forms") {
  const Image one = Image::Ones(4, 4);
  CHECK((snr_map(one, one, 1e-8).values - 80.0).abs().maxCoeff() <= 1e-6);
  const double expected = 10.0 * std::log10(4.0 / (1.0 + 1e-8));
  CHECK((snr_map(2.0 * one, one, 1e-8).values - expected).abs().maxCoeff() <= 1e-6);
  CHECK(expected == doctest::Approx(6.0206).epsilon(1e-5));

  // Doubling the residual at fixed m_in costs 20 log10 2.
  const Image m_in = (Image::Random(6, 6) + 2.0) * 10.0;
  const Image resid = (Image::Random(6, 6) + 1.5);
  const Image a = snr_map(m_in, m_in - resid, 1e-12).values;
  const Image b = snr_map(m_in, m_in - 2.0 * resid, 1e-12).values;
  CHECK(((a - b) - 20.0 * std::log10(2.0)).abs().maxCoeff() <= 1e-6);

  CHECK((snr_map(Image::Zero(2, 2), one.topLeftCorner(2, 2), 1e-8).values == -kSnrClampDb).all());
  CHECK(snr_map(m_in, m_in - resid, 1e-12).values.allFinite());
  CHECK_THROWS_AS(snr_map(one, one, 0.0), InputDomainError);
  CHECK_THROWS_AS(snr_map(one, Image::Ones(3, 4), 1.0), InputDomainError);
}

TEST_CASE("fusion_weights closed forms") {
  const SnrMap s{Image::Random(9, 9) * 30.0};
  const WeightMap same = fusion_weights(s, s, {});
  CHECK((same.image - 0.5).abs().maxCoeff() <= 1e-15);
  CHECK((same.event - 0.5).abs().maxCoeff() <= 1e-15);

  const double tau = 2.5;
  const WeightMap nine = fusion_weights({Image::Constant(3, 3, 1.0 + tau * std::log(9.0))},
                                        {Image::Constant(3, 3, 1.0)}, {1, tau});
  CHECK((nine.image - 0.9).abs().maxCoeff() <= 1e-12);

  const SnrMap t{Image::Random(9, 9) * 30.0};
  const double range = 60.0;
  const WeightMap hot = fusion_weights(s, t, {5, 1e3 * range});
  CHECK((hot.image - 0.5).abs().maxCoeff() <= 0.01);

  CHECK_THROWS_AS(fusion_weights(s, t, {4, 1.0}), InputDomainError);
  CHECK_THROWS_AS(fusion_weights(s, t, {3, 0.0}), InputDomainError);
  CHECK_THROWS_AS(fusion_weights(s, SnrMap{Image::Zero(8, 9)}, {}), InputDomainError);
}

TEST_CASE("fusion_weights invariants on random maps") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(-80.0, 80.0);
  for (int trial = 0; trial < 200; ++trial) {
    Image a(12, 10), b(12, 10);
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      a.data()[i] = u(gen);
      b.data()[i] = u(gen);
    }
    const FusionConfig cfg{trial % 2 ? 3 : 5, 1.0 + (trial % 7)};
    const WeightMap w = fusion_weights({a}, {b}, cfg);
    CHECK((w.image + w.event - 1.0).abs().maxCoeff() <= 1e-12);
    // Far-apart SNRs saturate the logistic to exactly 0 or 1 in double precision.
    CHECK((w.image >= 0.0).all());
    CHECK((w.image <= 1.0).all());

    const double shift = u(gen);
    const WeightMap ws = fusion_weights({a + shift}, {b + shift}, cfg);
    CHECK((ws.image - w.image).abs().maxCoeff() <= 1e-12);

    Image bumped = a;
    bumped(5, 5) += 5.0;
    const double before = w.image(5, 5), after = fusion_weights({bumped}, {b}, cfg).image(5, 5);
    CHECK(after >= before);
    if (before < 0.999) CHECK(after > before);
  }
}

TEST_CASE("constant weights") {
  const WeightMap w = constant_weights(3, 4, 0.5, 0.5);
  CHECK(w.image.rows() == 3);
  CHECK((w.image + w.event == 1.0).all());
}

TEST_CASE("encode_features") {
  const FeatureMap flat = encode_features(Image::Constant(12, 12, 7.0));
  for (int c = kGradX; c < kNumFeatureChannels; ++c) CHECK(flat.channel(c).abs().maxCoeff() <= 1e-12);

  Image ramp(10, 14);
  for (int x = 0; x < 14; ++x) ramp.col(x).setConstant(0.75 * x);
  const FeatureMap r = encode_features(ramp);
  CHECK((r.channel(kGradX) - 0.75).abs().maxCoeff() <= 1e-12);
  CHECK(r.channel(kGradY).abs().maxCoeff() <= 1e-12);

  std::mt19937_64 gen(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Image img(16, 16);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = n(gen);
  check_against_oracle(encode_features(img), img);
  check_against_oracle(encode_features(sim::RawFrame{img, 1.0}), img);

  sim::VoxelGrid vox;
  vox.t0 = 0;
  vox.t1 = 10;
  vox.bins = {img, 2.0 * img, -0.5 * img};
  check_against_oracle(encode_features(vox), 2.5 * img);
  CHECK_THROWS_AS(encode_features(sim::VoxelGrid{}), InputDomainError);

  img(3, 3) = std::nan("");
  CHECK_THROWS_AS(encode_features(img), InputDomainError);
}

TEST_CASE("apply_weights") {
  const FeatureMap f = encode_features(Image(Image::Random(8, 6)));
  CHECK((apply_weights(f, Image::Ones(8, 6)).data.array() == f.data.array()).all());
  CHECK((apply_weights(f, Image::Zero(8, 6)).data.array() == 0.0).all());

  const Image w = Image::Random(8, 6);
  const FeatureMap fw = apply_weights(f, w);
  double worst = 0.0;
  for (int c = 0; c < f.channels(); ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 6; ++x) worst = std::max(worst, std::abs(fw.channel(c)(y, x) - f.channel(c)(y, x) * w(y, x)));
    }
  }
  CHECK(worst <= 1e-12);

  FeatureMap g = f;
  g.data *= 3.0;
  CHECK((apply_weights(g, w).data - 3.0 * fw.data).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(apply_weights(f, Image::Ones(6, 8)), InputDomainError);
}

TEST_CASE("SNR regions on a simulated scene") {
  const pipeline::PipelineConfig cfg;
  const pipeline::SceneInputs in = pipeline::simulate_scene(cfg, pipeline::test_scene_seed(cfg.seed, 0), "s0");
  const auto ecns = pipeline::run_ecns(cfg, in);
  const auto srie = pipeline::run_srie(cfg, in, ecns);
  const auto snr = metrics::region_snr_stats(srie.snr_event.values, *in.regions, sim::kNumSceneRegions);
  const auto w_evt = metrics::region_snr_stats(srie.weights.event, *in.regions, sim::kNumSceneRegions);
  const auto w_img = metrics::region_snr_stats(srie.weights.image, *in.regions, sim::kNumSceneRegions);
  CHECK(snr[sim::kDarkTextured].mean > snr[sim::kDarkSmooth].mean);
  CHECK(w_evt[sim::kDarkTextured].mean > w_evt[sim::kDarkSmooth].mean);
  CHECK(w_img[sim::kDarkSmooth].mean > 0.5);
}

}  // TEST_SUITE
