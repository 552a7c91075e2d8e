// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/diffusion.hpp>

#include <evraw/rng.hpp>

#include <algorithm>
#include <cmath>
#include <random>

namespace evraw::diffusion {

DiffusionSchedule make_schedule(int num_steps, double beta_min, double beta_max, int sampling_steps) {
  if (sampling_steps < 1 || num_steps < sampling_steps) {
    throw InputDomainError("make_schedule: need T >= S >= 1");
  }
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw InputDomainError("make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  DiffusionSchedule s;
  s.num_steps = num_steps;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.betas.assign(num_steps + 1, 0.0);
  s.alpha_bars.assign(num_steps + 1, 1.0);
  for (int t = 1; t <= num_steps; ++t) {
    const double frac = num_steps > 1 ? static_cast<double>(t - 1) / (num_steps - 1) : 0.0;
    s.betas[t] = beta_min + (beta_max - beta_min) * frac;
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t]);
  }
  s.timesteps.resize(sampling_steps);
  for (int i = 1; i <= sampling_steps; ++i) {
    s.timesteps[i - 1] = static_cast<int>(static_cast<long long>(i) * num_steps / sampling_steps);
  }
  return s;
}

nlohmann::json schedule_to_json(const DiffusionSchedule& s) {
  return {{"num_steps", s.num_steps},
          {"beta_min", s.beta_min},
          {"beta_max", s.beta_max},
          {"sampling_steps", s.sampling_steps()},
          {"timesteps", s.timesteps}};
}

DiffusionSchedule schedule_from_json(const nlohmann::json& j) {
  DiffusionSchedule s = make_schedule(j.at("num_steps").get<int>(), j.at("beta_min").get<double>(),
                                      j.at("beta_max").get<double>(), j.at("sampling_steps").get<int>());
  if (j.contains("timesteps") && j.at("timesteps").get<std::vector<int>>() != s.timesteps) {
    throw FormatError("schedule: stored timestep subsequence does not match its parameters");
  }
  return s;
}

LatentImage forward_diffuse(const LatentImage& x0, int t, const DiffusionSchedule& schedule,
                            std::uint64_t seed) {
  if (t < 1 || t > schedule.num_steps) throw InputDomainError("forward_diffuse: t outside [1, T]");
  const double a = std::sqrt(schedule.alpha_bar(t));
  const double s = std::sqrt(1.0 - schedule.alpha_bar(t));
  LatentImage out(x0.rows(), x0.cols());
  const Eigen::Index n = x0.size();
#ifdef EVRAW_HAVE_OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (Eigen::Index i = 0; i < n; ++i) {
    CounterRng rng(seed, stream_id(RngDomain::kDiffusion, static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> normal(0.0, 1.0);
    out.data()[i] = a * x0.data()[i] + s * normal(rng);
  }
  return out;
}

LatentImage predict_x0(const LatentImage& x_t, const LatentImage& eps, int t,
                       const DiffusionSchedule& schedule) {
  const double ab = schedule.alpha_bar(t);
  return (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

LatentImage ddim_step(const LatentImage& x_t, const LatentImage& eps, int t, int t_prev,
                      const DiffusionSchedule& schedule) {
  if (!(t > t_prev && t_prev >= 0 && t <= schedule.num_steps)) {
    throw InputDomainError("ddim_step: need T >= t > t_prev >= 0");
  }
  require_same_shape(x_t, eps, "ddim_step");
  if (!eps.allFinite()) throw PredictorError("ddim_step: non-finite noise prediction", t);
  const LatentImage x0_hat = predict_x0(x_t, eps, t, schedule);
  if (t_prev == 0) return x0_hat;
  const double ab_prev = schedule.alpha_bar(t_prev);
  return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps;
}

AnalyticGaussianPredictor::AnalyticGaussianPredictor(double mean, double variance,
                                                     DiffusionSchedule schedule)
    : mean_(mean), variance_(variance), schedule_(std::move(schedule)) {
  if (!(variance >= 0.0)) throw InputDomainError("AnalyticGaussianPredictor: variance must be >= 0");
}

LatentImage AnalyticGaussianPredictor::posterior_mean(const LatentImage& x_t, int t) const {
  const double ab = schedule_.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double gain = a * variance_ / (ab * variance_ + 1.0 - ab);
  return mean_ + gain * (x_t - a * mean_);
}

LatentImage AnalyticGaussianPredictor::predict(const LatentImage& x_t, const fusion::FeatureMap&,
                                               int t) const {
  const double ab = schedule_.alpha_bar(t);
  return (x_t - std::sqrt(ab) * posterior_mean(x_t, t)) / std::sqrt(1.0 - ab);
}

nlohmann::json AnalyticGaussianPredictor::to_json() const {
  return {{"type", "analytic_gaussian"},
          {"mean", mean_},
          {"variance", variance_},
          {"schedule", schedule_to_json(schedule_)}};
}

std::unique_ptr<AnalyticGaussianPredictor> point_mass_predictor(double value,
                                                                const DiffusionSchedule& schedule) {
  return std::make_unique<AnalyticGaussianPredictor>(value, 0.0, schedule);
}

namespace {

/// Fills `design` (pixels x P) with the regressors described on the class.
void build_regressors(const LatentImage& x_t, const fusion::FeatureMap& cond, int t,
                      const DiffusionSchedule& schedule, Eigen::MatrixXd& design) {
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
  const Eigen::Index n = x_t.size();
  const int c = cond.channels();
  design.resize(n, c + 3);
  design.col(0) = Eigen::Map<const Eigen::VectorXd>(x_t.data(), n) / s;
  for (int k = 0; k < c; ++k) design.col(1 + k) = cond.data.row(k).transpose() * (a / s);
  design.col(c + 1).setConstant(a / s);
  design.col(c + 2).setOnes();
}

int bucket_index(int t, int num_buckets, int num_steps) {
  const long long b = static_cast<long long>(t - 1) * num_buckets / num_steps;
  return static_cast<int>(std::clamp<long long>(b, 0, num_buckets - 1));
}

void check_sample(const TrainingSample& smp, int channels, const DiffusionSchedule& schedule) {
  if (smp.t < 1 || smp.t > schedule.num_steps) {
    throw InputDomainError("ConditionalLinearPredictor: sample timestep outside [1, T]");
  }
  require_same_shape(smp.x_t, smp.eps, "ConditionalLinearPredictor");
  if (smp.cond.height != smp.x_t.rows() || smp.cond.width != smp.x_t.cols() ||
      smp.cond.channels() != channels) {
    throw InputDomainError("ConditionalLinearPredictor: conditioning shape mismatch");
  }
}

}  // namespace

ConditionalLinearPredictor::ConditionalLinearPredictor(DiffusionSchedule schedule, int feature_channels,
                                                       std::vector<Bucket> buckets, bool regularized)
    : schedule_(std::move(schedule)),
      feature_channels_(feature_channels),
      buckets_(std::move(buckets)),
      regularized_(regularized) {
  if (buckets_.empty()) throw InputDomainError("ConditionalLinearPredictor: no buckets");
  if (std::none_of(buckets_.begin(), buckets_.end(), [](const Bucket& b) { return b.fitted; })) {
    throw InputDomainError("ConditionalLinearPredictor: no fitted bucket");
  }
  for (const Bucket& b : buckets_) {
    if (b.fitted && b.coefficients.size() != regressor_count()) {
      throw InputDomainError("ConditionalLinearPredictor: coefficient count mismatch");
    }
  }
}

int ConditionalLinearPredictor::bucket_of(int t) const {
  return bucket_index(t, static_cast<int>(buckets_.size()), schedule_.num_steps);
}

ConditionalLinearPredictor ConditionalLinearPredictor::fit(const std::vector<TrainingSample>& samples,
                                                           const DiffusionSchedule& schedule,
                                                           int num_buckets) {
  if (samples.empty()) throw InputDomainError("ConditionalLinearPredictor::fit: no samples");
  if (num_buckets < 1) throw InputDomainError("ConditionalLinearPredictor::fit: need >= 1 bucket");
  const int channels = samples.front().cond.channels();
  const int p = channels + 3;
  std::size_t total_rows = 0;
  for (const TrainingSample& smp : samples) {
    check_sample(smp, channels, schedule);
    total_rows += static_cast<std::size_t>(smp.x_t.size());
  }
  if (total_rows < static_cast<std::size_t>(p + 2)) {
    throw InputDomainError("ConditionalLinearPredictor::fit: need at least feature-dim + 2 samples");
  }

  std::vector<Bucket> buckets(num_buckets);

  std::vector<Eigen::MatrixXd> gram(num_buckets, Eigen::MatrixXd::Zero(p, p));
  std::vector<Eigen::VectorXd> moment(num_buckets, Eigen::VectorXd::Zero(p));
  Eigen::MatrixXd design;
  for (const TrainingSample& smp : samples) {
    const int b = bucket_index(smp.t, num_buckets, schedule.num_steps);
    build_regressors(smp.x_t, smp.cond, smp.t, schedule, design);
    gram[b].noalias() += design.transpose() * design;
    moment[b].noalias() += design.transpose() * Eigen::Map<const Eigen::VectorXd>(smp.eps.data(), smp.eps.size());
    buckets[b].rows += static_cast<std::size_t>(smp.x_t.size());
  }

  bool regularized = false;
  for (int b = 0; b < num_buckets; ++b) {
    if (buckets[b].rows == 0) continue;
    // Jacobi scaling so the rank test and the ridge act on unit-diagonal systems.
    Eigen::VectorXd scale = gram[b].diagonal().cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
      if (!(scale(i) > 0.0)) scale(i) = 1.0;
    }
    const Eigen::MatrixXd scaled = scale.cwiseInverse().asDiagonal() * gram[b] * scale.cwiseInverse().asDiagonal();
    const Eigen::VectorXd rhs = moment[b].cwiseQuotient(scale);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(scaled);
    const double max_ev = eig.eigenvalues().maxCoeff();
    const double min_ev = eig.eigenvalues().minCoeff();
    Eigen::VectorXd sol;
    if (buckets[b].rows < static_cast<std::size_t>(p) || !(min_ev > 1e-12 * max_ev)) {
      regularized = true;
      sol = (scaled + kRidge * Eigen::MatrixXd::Identity(p, p)).ldlt().solve(rhs);
    } else {
      sol = scaled.ldlt().solve(rhs);
    }
    buckets[b].coefficients = sol.cwiseQuotient(scale);
    buckets[b].fitted = true;
  }

  // Residuals in a second pass to avoid cancellation in the normal-equation form.
  std::vector<double> sq(num_buckets, 0.0);
  for (const TrainingSample& smp : samples) {
    const int b = bucket_index(smp.t, num_buckets, schedule.num_steps);
    build_regressors(smp.x_t, smp.cond, smp.t, schedule, design);
    const Eigen::VectorXd r =
        design * buckets[b].coefficients - Eigen::Map<const Eigen::VectorXd>(smp.eps.data(), smp.eps.size());
    sq[b] += r.squaredNorm();
  }
  for (int b = 0; b < num_buckets; ++b) {
    if (buckets[b].rows > 0) buckets[b].rms_residual = std::sqrt(sq[b] / static_cast<double>(buckets[b].rows));
  }
  return ConditionalLinearPredictor(schedule, channels, std::move(buckets), regularized);
}

double ConditionalLinearPredictor::rms_residual() const {
  double sq = 0.0;
  std::size_t rows = 0;
  for (const Bucket& b : buckets_) {
    sq += b.rms_residual * b.rms_residual * static_cast<double>(b.rows);
    rows += b.rows;
  }
  return rows > 0 ? std::sqrt(sq / static_cast<double>(rows)) : 0.0;
}

LatentImage ConditionalLinearPredictor::predict(const LatentImage& x_t, const fusion::FeatureMap& cond,
                                                int t) const {
  if (cond.channels() != feature_channels_ || cond.height != x_t.rows() || cond.width != x_t.cols()) {
    throw InputDomainError("ConditionalLinearPredictor: conditioning shape mismatch");
  }
  if (t < 1 || t > schedule_.num_steps) throw InputDomainError("ConditionalLinearPredictor: t outside [1, T]");
  // Nearest fitted bucket when the timestep's own bucket saw no data.
  const int home = bucket_of(t);
  int chosen = -1;
  for (int d = 0; chosen < 0; ++d) {
    for (int b : {home - d, home + d}) {
      if (b >= 0 && b < static_cast<int>(buckets_.size()) && buckets_[b].fitted) {
        chosen = b;
        break;
      }
    }
  }
  Eigen::MatrixXd design;
  build_regressors(x_t, cond, t, schedule_, design);
  LatentImage out(x_t.rows(), x_t.cols());
  Eigen::Map<Eigen::VectorXd>(out.data(), out.size()) = design * buckets_[chosen].coefficients;
  return out;
}

nlohmann::json ConditionalLinearPredictor::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const Bucket& b : buckets_) {
    jb.push_back({{"fitted", b.fitted},
                  {"rows", b.rows},
                  {"rms_residual", b.rms_residual},
                  {"coefficients", std::vector<double>(b.coefficients.data(),
                                                       b.coefficients.data() + b.coefficients.size())}});
  }
  return {{"type", "conditional_linear"},
          {"feature_channels", feature_channels_},
          {"regularized", regularized_},
          {"schedule", schedule_to_json(schedule_)},
          {"buckets", jb}};
}

ConditionalLinearPredictor ConditionalLinearPredictor::from_json(const nlohmann::json& j) {
  if (j.at("type").get<std::string>() != "conditional_linear") {
    throw FormatError("predictor: expected type conditional_linear");
  }
  std::vector<Bucket> buckets;
  for (const auto& jb : j.at("buckets")) {
    Bucket b;
    b.fitted = jb.at("fitted").get<bool>();
    b.rows = jb.at("rows").get<std::size_t>();
    b.rms_residual = jb.at("rms_residual").get<double>();
    const auto coeffs = jb.at("coefficients").get<std::vector<double>>();
    b.coefficients = Eigen::Map<const Eigen::VectorXd>(coeffs.data(), static_cast<Eigen::Index>(coeffs.size()));
    buckets.push_back(std::move(b));
  }
  return ConditionalLinearPredictor(schedule_from_json(j.at("schedule")), j.at("feature_channels").get<int>(),
                                    std::move(buckets), j.at("regularized").get<bool>());
}

std::unique_ptr<NoisePredictor> predictor_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "zero") return std::make_unique<ZeroPredictor>();
  if (type == "analytic_gaussian") {
    return std::make_unique<AnalyticGaussianPredictor>(j.at("mean").get<double>(), j.at("variance").get<double>(),
                                                       schedule_from_json(j.at("schedule")));
  }
  if (type == "conditional_linear") {
    return std::make_unique<ConditionalLinearPredictor>(ConditionalLinearPredictor::from_json(j));
  }
  throw FormatError("predictor: unknown type '" + type + "'");
}

LatentImage ddim_sample(const LatentImage& x_T, const fusion::FeatureMap& cond,
                        const NoisePredictor& predictor, const DiffusionSchedule& schedule,
                        const StepObserver& observer) {
  LatentImage x = x_T;
  const int steps = schedule.sampling_steps();
  for (int k = 0; k < steps; ++k) {
    const int i = steps - 1 - k;
    const int t = schedule.timesteps[i];
    const int t_prev = i > 0 ? schedule.timesteps[i - 1] : 0;
    LatentImage eps;
    try {
      eps = predictor.predict(x, cond, t);
    } catch (const std::exception& e) {
      throw PredictorError(std::string("predictor failed: ") + e.what(), k);
    }
    if (eps.rows() != x.rows() || eps.cols() != x.cols() || !eps.allFinite()) {
      throw PredictorError("predictor returned a malformed or non-finite prediction", k);
    }
    if (observer) observer(k, t, x, predict_x0(x, eps, t, schedule));
    x = ddim_step(x, eps, t, t_prev, schedule);
  }
  return x;
}

}  // namespace evraw::diffusion
