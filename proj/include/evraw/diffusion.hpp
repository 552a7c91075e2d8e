// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Deterministic (eta = 0) DDIM reconstruction with pluggable noise predictors.

#pragma once

#include <evraw/core.hpp>
#include <evraw/fusion.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace evraw::diffusion {

/// Latent images live in normalized [-1, 1] intensity.
using LatentImage = Image;

/// Linear beta schedule over t = 1..T plus a uniform-stride DDIM subsequence.
struct DiffusionSchedule {
  int num_steps = 1000;   ///< T
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::vector<double> betas;       ///< betas[t], t = 1..T; betas[0] unused (0)
  std::vector<double> alpha_bars;  ///< alpha_bars[t]; alpha_bars[0] = 1
  std::vector<int> timesteps;      ///< tau_1 < ... < tau_S

  double alpha_bar(int t) const { return alpha_bars.at(static_cast<std::size_t>(t)); }
  int sampling_steps() const { return static_cast<int>(timesteps.size()); }
};

DiffusionSchedule make_schedule(int num_steps = 1000, double beta_min = 1e-4, double beta_max = 0.02,
                                int sampling_steps = 50);

nlohmann::json schedule_to_json(const DiffusionSchedule& schedule);
DiffusionSchedule schedule_from_json(const nlohmann::json& j);

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) z with z drawn from per-pixel seeded streams.
LatentImage forward_diffuse(const LatentImage& x0, int t, const DiffusionSchedule& schedule,
                            std::uint64_t seed);

/// x0_hat = (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
LatentImage predict_x0(const LatentImage& x_t, const LatentImage& eps, int t,
                       const DiffusionSchedule& schedule);

/// One eta = 0 update from t to t_prev; t_prev = 0 returns x0_hat.
LatentImage ddim_step(const LatentImage& x_t, const LatentImage& eps, int t, int t_prev,
                      const DiffusionSchedule& schedule);

/// eps_theta(x_t, F_fused, t). Implementations are read-only after construction.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual LatentImage predict(const LatentImage& x_t, const fusion::FeatureMap& cond, int t) const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class ZeroPredictor final : public NoisePredictor {
 public:
  LatentImage predict(const LatentImage& x_t, const fusion::FeatureMap&, int) const override {
    return LatentImage::Zero(x_t.rows(), x_t.cols());
  }
  nlohmann::json to_json() const override { return {{"type", "zero"}}; }
};

/// Exact optimal predictor for x0 ~ N(mean, variance I).
class AnalyticGaussianPredictor final : public NoisePredictor {
 public:
  AnalyticGaussianPredictor(double mean, double variance, DiffusionSchedule schedule);

  /// E[x0 | x_t].
  LatentImage posterior_mean(const LatentImage& x_t, int t) const;
  LatentImage predict(const LatentImage& x_t, const fusion::FeatureMap& cond, int t) const override;
  nlohmann::json to_json() const override;

 private:
  double mean_;
  double variance_;
  DiffusionSchedule schedule_;
};

/// Degenerate Gaussian: x0 is the constant `value`.
std::unique_ptr<AnalyticGaussianPredictor> point_mass_predictor(double value,
                                                                const DiffusionSchedule& schedule);

/// One supervised pair for the linear predictor.
struct TrainingSample {
  LatentImage x_t;
  fusion::FeatureMap cond;
  int t = 1;
  LatentImage eps;
};

/// Per-timestep-bucket least squares predictor.
///
/// With a = sqrt(abar_t), s = sqrt(1 - abar_t), the regressors at a pixel are
/// [x_t / s, (a / s) F_1, ..., (a / s) F_C, a / s, 1]. This is linear in
/// x_t, the conditioning channels and a constant, with the timestep folded
/// into the scaling, so a predictor that estimates x0 linearly from the
/// conditioning is representable exactly inside each bucket.
class ConditionalLinearPredictor final : public NoisePredictor {
 public:
  static constexpr int kDefaultBuckets = 10;
  static constexpr double kRidge = 1e-6;

  struct Bucket {
    Eigen::VectorXd coefficients;
    double rms_residual = 0.0;
    std::size_t rows = 0;
    bool fitted = false;
  };

  ConditionalLinearPredictor(DiffusionSchedule schedule, int feature_channels, std::vector<Bucket> buckets,
                             bool regularized);

  static ConditionalLinearPredictor fit(const std::vector<TrainingSample>& samples,
                                        const DiffusionSchedule& schedule,
                                        int num_buckets = kDefaultBuckets);
  static ConditionalLinearPredictor from_json(const nlohmann::json& j);

  LatentImage predict(const LatentImage& x_t, const fusion::FeatureMap& cond, int t) const override;
  nlohmann::json to_json() const override;

  int bucket_of(int t) const;
  int feature_channels() const { return feature_channels_; }
  int regressor_count() const { return feature_channels_ + 3; }
  const std::vector<Bucket>& buckets() const { return buckets_; }
  /// True when some bucket needed the ridge fallback (rank-deficient design).
  bool regularized() const { return regularized_; }
  double rms_residual() const;

 private:
  DiffusionSchedule schedule_;
  int feature_channels_;
  std::vector<Bucket> buckets_;
  bool regularized_;
};

std::unique_ptr<NoisePredictor> predictor_from_json(const nlohmann::json& j);

/// Called after each step with (step index, t, x_t before the update, x0_hat).
using StepObserver = std::function<void(int, int, const LatentImage&, const LatentImage&)>;

/// Iterates ddim_step over tau_S -> ... -> tau_1 -> 0.
LatentImage ddim_sample(const LatentImage& x_T, const fusion::FeatureMap& cond,
                        const NoisePredictor& predictor, const DiffusionSchedule& schedule,
                        const StepObserver& observer = {});

}  // namespace evraw::diffusion
