// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end orchestration: simulate -> collaborative denoising -> SNR-guided
// weighting -> cross attention -> DDIM reconstruction -> evaluation.

#pragma once

#include <evraw/core.hpp>
#include <evraw/denoise.hpp>
#include <evraw/diffusion.hpp>
#include <evraw/fusion.hpp>
#include <evraw/metrics.hpp>
#include <evraw/scene.hpp>
#include <evraw/sensor.hpp>

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace evraw::pipeline {

enum class FusionMode { kDualSnr, kImageSnrOnly, kDirect };

std::string to_string(FusionMode mode);

struct Ablation {
  bool disable_ecns = false;  ///< feed raw inputs straight to the weighting stage
  bool disable_srie = false;  ///< unweighted features (W = 1 for both modalities)
  bool disable_cad = false;   ///< output the (denoised) RAW frame, no attention / sampling
  FusionMode fusion = FusionMode::kDualSnr;
};

struct PipelineConfig {
  sim::SceneSpec scene;
  sim::RawNoiseParams raw_noise{1.0, 2.0, 1.0, 64.0, true, true, true};
  double contrast_threshold = 0.2;
  double photoreceptor_bias = sim::kDefaultPhotoreceptorBias;
  sim::BaRateModel ba{1.0, 0.1};

  double illumination_sigma = 2.0;
  denoise::EventFilterParams event_filter;
  denoise::ImageFilterParams image_filter{1.5, 6.0, 0.9};
  /// > 0: range sigma = this multiple of the shot + read noise std at the
  /// frame's median level; 0 keeps image_filter.range_sigma.
  double range_sigma_per_noise_std = 1.5;
  double edge_blur_sigma = 1.0;
  double consistency_epsilon = 1e-6;

  int voxel_bins = 5;
  double snr_epsilon_image = 10.0;  ///< DN^2
  double snr_epsilon_event = 10.0;  ///< count^2
  fusion::FusionConfig fusion;

  int patch = 4;
  int diffusion_steps = 1000;
  int sampling_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  std::string predictor = "conditional_linear";  ///< or "zero"
  int train_scenes = 8;
  int test_scenes = 20;

  Ablation ablation;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
  diffusion::DiffusionSchedule schedule() const;
};

/// Reads a (possibly partial) JSON config over the defaults. Unknown keys are errors.
PipelineConfig config_from_json(const nlohmann::json& j, PipelineConfig base = {});
nlohmann::json config_to_json(const PipelineConfig& cfg);

/// Everything one reconstruction needs; ground truth is optional.
struct SceneInputs {
  std::string id;
  sim::RawFrame raw;       ///< noisy frame at the end of the event window
  sim::RawFrame raw_prev;  ///< noisy frame at the start of the event window
  sim::EventStream events;
  TimeNs t0 = 0;
  TimeNs t1 = 0;
  std::optional<sim::RawFrame> ground_truth;
  std::optional<sim::LabelMap> regions;
  double exposure_scale = 1.0;  ///< linear DN -> [0, 1] display scale
};

/// Exposure scale matched to the reference: 1 / max(reference), or from the
/// 99.5th percentile of `fallback` when no reference exists.
double exposure_scale_for(const std::optional<sim::RawFrame>& reference, const sim::RawFrame& fallback);

SceneInputs simulate_scene(const PipelineConfig& cfg, std::uint64_t scene_seed, const std::string& id);
SceneInputs scene_inputs_from(const PipelineConfig& cfg, const sim::Scene& scene, std::uint64_t scene_seed,
                              const std::string& id);

/// Scene directory: events.evt, raw.pgm and raw_prev.pgm with RAW sidecars,
/// optional gt.pgm / regions.pgm inspection maps and scene.json (id, window).
void save_scene_inputs(const std::filesystem::path& dir, const SceneInputs& in);
SceneInputs load_scene_inputs(const std::filesystem::path& dir);

std::uint64_t train_scene_seed(std::uint64_t seed, int index);
std::uint64_t test_scene_seed(std::uint64_t seed, int index);

struct EcnsOutput {
  sim::IlluminationMap illumination;
  sim::EventStream events;
  denoise::EdgeMap edge;
  sim::RawFrame raw;
  sim::RawFrame raw_prev;
  double consistency_loss = 0.0;
};

/// Image filter parameters for one frame, with the noise-scaled range sigma applied.
denoise::ImageFilterParams image_filter_for(const PipelineConfig& cfg, const sim::RawFrame& raw);

EcnsOutput run_ecns(const PipelineConfig& cfg, const SceneInputs& in);

struct SrieOutput {
  fusion::SnrMap snr_image;
  fusion::SnrMap snr_event;
  fusion::WeightMap weights;
  fusion::FeatureMap image_weighted;
  fusion::FeatureMap event_weighted;
};

SrieOutput run_srie(const PipelineConfig& cfg, const SceneInputs& in, const EcnsOutput& ecns);

/// Cross attention; conditioning is [F_img_w, F_evt_w, A_E, A_I].
fusion::FeatureMap conditioning(const PipelineConfig& cfg, const SrieOutput& srie);

/// Maps linear DN to the [-1, 1] latent domain and back.
diffusion::LatentImage to_latent(const Image& linear, double exposure_scale);
Image from_latent(const diffusion::LatentImage& latent, double exposure_scale);

struct PipelineResult {
  Image reconstruction;  ///< linear DN
  Image display;         ///< 8-bit tone-mapped codes
  EcnsOutput ecns;
  std::optional<SrieOutput> srie;
  std::optional<metrics::ImageMetrics> metrics;  ///< when ground truth is present
  double input_psnr_db = 0.0;                    ///< tone-mapped noisy input vs reference
};

PipelineResult run_pipeline(const PipelineConfig& cfg, const SceneInputs& in,
                            const diffusion::NoisePredictor* predictor);

/// Fits the configured predictor on `train_scenes` simulated scenes.
std::unique_ptr<diffusion::NoisePredictor> train_predictor(const PipelineConfig& cfg);

/// Tone-mapped quality of `reconstruction` against the reference.
metrics::ImageMetrics evaluate_reconstruction(const std::string& id, const Image& reconstruction,
                                             const sim::RawFrame& reference, double exposure_scale,
                                             double consistency_loss);

struct BenchmarkResult {
  metrics::MetricReport report;
  std::vector<SceneInputs> scenes;
  std::vector<PipelineResult> results;  ///< configured mode, one per test scene
  std::unique_ptr<diffusion::NoisePredictor> predictor;  ///< configured mode; null with disable_cad
  double mean_psnr = 0.0;               ///< configured mode
  double mean_input_psnr = 0.0;
  double mean_psnr_dual = 0.0;
  double mean_psnr_image_only = 0.0;
  double mean_psnr_direct = 0.0;
};

/// Runs the configured pipeline on `test_scenes` simulated scenes; with
/// `with_fusion_ablation` every fusion mode is trained and evaluated too.
BenchmarkResult run_benchmark(const PipelineConfig& cfg, bool with_fusion_ablation);

struct DatasetEvaluation {
  metrics::MetricReport report;
  std::vector<std::string> unmatched;  ///< files present in only one directory
};

/// Compares same-named PGM files (values normalized by maxval, peak 1).
/// Throws PipelineError when no file names match.
DatasetEvaluation evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir);

}  // namespace evraw::pipeline
