// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/pipeline.hpp>

#include <evraw/attention.hpp>
#include <evraw/io.hpp>
#include <evraw/rng.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace evraw::pipeline {

using nlohmann::json;

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kDualSnr:
      return "dual_snr";
    case FusionMode::kImageSnrOnly:
      return "image_snr_only";
    case FusionMode::kDirect:
      return "direct";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Config

namespace {

/// Reads known keys of one JSON object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }
  ~Section() = default;

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: '" + name_ + "." + key + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + name_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return splitmix64_finalize(seed ^ splitmix64_finalize(tag * 0x9E3779B97F4A7C15ULL + index));
}

enum SeedTag : std::uint64_t {
  kTagTrainScene = 1,
  kTagTestScene = 2,
  kTagRawT = 3,
  kTagRawPrev = 4,
  kTagBa = 5,
  kTagProjection = 6,
  kTagTrainNoise = 8,
  kTagTrainStep = 9,
};

}  // namespace

void PipelineConfig::validate() const {
  require(scene.width >= 3 && scene.height >= 1 && scene.num_frames >= 2 && scene.duration_ns > 0,
          "scene geometry out of range");
  require(scene.dark_electrons > 0 && scene.bright_electrons > 0 && scene.texture_contrast >= 1,
          "scene levels out of range");
  try {
    raw_noise.validate();
    ba.validate();
    event_filter.validate();
    image_filter.validate();
    fusion.validate();
  } catch (const InputDomainError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  require(contrast_threshold > 0, "contrast_threshold must be > 0");
  require(photoreceptor_bias >= 0, "photoreceptor_bias must be >= 0");
  require(illumination_sigma >= 0, "illumination_sigma must be >= 0");
  require(range_sigma_per_noise_std >= 0, "range_sigma_per_noise_std must be >= 0");
  require(edge_blur_sigma >= 0, "edge_blur_sigma must be >= 0");
  require(consistency_epsilon > 0, "consistency_epsilon must be > 0");
  require(voxel_bins >= 2, "voxel_bins must be >= 2");
  require(snr_epsilon_image > 0 && snr_epsilon_event > 0, "snr epsilons must be > 0");
  require(patch >= 1, "patch must be >= 1");
  require(sampling_steps >= 1 && diffusion_steps >= sampling_steps, "need diffusion_steps >= sampling_steps >= 1");
  require(beta_min > 0 && beta_min <= beta_max && beta_max < 1, "need 0 < beta_min <= beta_max < 1");
  require(predictor == "conditional_linear" || predictor == "zero", "predictor must be conditional_linear or zero");
  require(train_scenes >= 1, "train_scenes must be >= 1");
  require(test_scenes >= 1, "test_scenes must be >= 1");
}

diffusion::DiffusionSchedule PipelineConfig::schedule() const {
  return diffusion::make_schedule(diffusion_steps, beta_min, beta_max, sampling_steps);
}

PipelineConfig config_from_json(const json& j, PipelineConfig c) {
  Section root(j, "config");
  root.get("seed", c.seed);
  if (root.has("scene")) {
    Section s(root.at("scene"), "scene");
    s.get("width", c.scene.width);
    s.get("height", c.scene.height);
    s.get("num_frames", c.scene.num_frames);
    s.get("duration_ns", c.scene.duration_ns);
    s.get("dark_electrons", c.scene.dark_electrons);
    s.get("bright_electrons", c.scene.bright_electrons);
    s.get("texture_contrast", c.scene.texture_contrast);
    s.get("motion_px", c.scene.motion_px);
    s.finish();
  }
  if (root.has("raw_noise")) {
    Section s(root.at("raw_noise"), "raw_noise");
    s.get("gain", c.raw_noise.gain);
    s.get("read_sigma", c.raw_noise.read_sigma);
    s.get("quant_step", c.raw_noise.quant_step);
    s.get("black_level", c.raw_noise.black_level);
    s.get("shot_noise", c.raw_noise.shot_noise);
    s.get("read_noise", c.raw_noise.read_noise);
    s.get("quantization", c.raw_noise.quantization);
    s.finish();
  }
  if (root.has("events")) {
    Section s(root.at("events"), "events");
    s.get("contrast_threshold", c.contrast_threshold);
    s.get("photoreceptor_bias", c.photoreceptor_bias);
    s.get("ba_base_rate", c.ba.base_rate);
    s.get("ba_slope", c.ba.slope);
    s.finish();
  }
  if (root.has("ecns")) {
    Section s(root.at("ecns"), "ecns");
    s.get("illumination_sigma", c.illumination_sigma);
    s.get("neighbor_radius", c.event_filter.neighbor_radius);
    s.get("min_support", c.event_filter.min_support);
    s.get("base_window_ns", c.event_filter.base_window);
    s.get("adaptivity", c.event_filter.adaptivity);
    s.get("spatial_sigma", c.image_filter.spatial_sigma);
    // null encodes +inf (range term disabled)
    if (s.has("range_sigma") && s.at("range_sigma").is_null()) {
      c.image_filter.range_sigma = std::numeric_limits<double>::infinity();
    } else {
      s.get("range_sigma", c.image_filter.range_sigma);
    }
    s.get("range_sigma_per_noise_std", c.range_sigma_per_noise_std);
    s.get("edge_attenuation", c.image_filter.edge_attenuation);
    s.get("edge_blur_sigma", c.edge_blur_sigma);
    s.get("consistency_epsilon", c.consistency_epsilon);
    s.finish();
  }
  if (root.has("srie")) {
    Section s(root.at("srie"), "srie");
    s.get("voxel_bins", c.voxel_bins);
    s.get("snr_epsilon_image", c.snr_epsilon_image);
    s.get("snr_epsilon_event", c.snr_epsilon_event);
    s.get("kernel_size", c.fusion.kernel_size);
    s.get("temperature", c.fusion.temperature);
    s.finish();
  }
  if (root.has("cad")) {
    Section s(root.at("cad"), "cad");
    s.get("patch", c.patch);
    s.get("diffusion_steps", c.diffusion_steps);
    s.get("sampling_steps", c.sampling_steps);
    s.get("beta_min", c.beta_min);
    s.get("beta_max", c.beta_max);
    s.get("predictor", c.predictor);
    s.get("train_scenes", c.train_scenes);
    s.finish();
  }
  if (root.has("benchmark")) {
    Section s(root.at("benchmark"), "benchmark");
    s.get("test_scenes", c.test_scenes);
    s.finish();
  }
  if (root.has("ablation")) {
    Section s(root.at("ablation"), "ablation");
    bool image_only = c.ablation.fusion == FusionMode::kImageSnrOnly;
    bool direct = c.ablation.fusion == FusionMode::kDirect;
    s.get("disable_ecns", c.ablation.disable_ecns);
    s.get("disable_srie", c.ablation.disable_srie);
    s.get("disable_cad", c.ablation.disable_cad);
    s.get("image_snr_only_fusion", image_only);
    s.get("direct_fusion", direct);
    s.finish();
    require(!(image_only && direct), "image_snr_only_fusion and direct_fusion are mutually exclusive");
    c.ablation.fusion = image_only ? FusionMode::kImageSnrOnly : direct ? FusionMode::kDirect : FusionMode::kDualSnr;
  }
  root.finish();
  c.validate();
  return c;
}

json config_to_json(const PipelineConfig& c) {
  const bool finite_range = std::isfinite(c.image_filter.range_sigma);
  return {
      {"seed", c.seed},
      {"scene",
       {{"width", c.scene.width},
        {"height", c.scene.height},
        {"num_frames", c.scene.num_frames},
        {"duration_ns", c.scene.duration_ns},
        {"dark_electrons", c.scene.dark_electrons},
        {"bright_electrons", c.scene.bright_electrons},
        {"texture_contrast", c.scene.texture_contrast},
        {"motion_px", c.scene.motion_px}}},
      {"raw_noise",
       {{"gain", c.raw_noise.gain},
        {"read_sigma", c.raw_noise.read_sigma},
        {"quant_step", c.raw_noise.quant_step},
        {"black_level", c.raw_noise.black_level},
        {"shot_noise", c.raw_noise.shot_noise},
        {"read_noise", c.raw_noise.read_noise},
        {"quantization", c.raw_noise.quantization}}},
      {"events",
       {{"contrast_threshold", c.contrast_threshold},
        {"photoreceptor_bias", c.photoreceptor_bias},
        {"ba_base_rate", c.ba.base_rate},
        {"ba_slope", c.ba.slope}}},
      {"ecns",
       {{"illumination_sigma", c.illumination_sigma},
        {"neighbor_radius", c.event_filter.neighbor_radius},
        {"min_support", c.event_filter.min_support},
        {"base_window_ns", c.event_filter.base_window},
        {"adaptivity", c.event_filter.adaptivity},
        {"spatial_sigma", c.image_filter.spatial_sigma},
        {"range_sigma", finite_range ? json(c.image_filter.range_sigma) : json(nullptr)},
        {"range_sigma_per_noise_std", c.range_sigma_per_noise_std},
        {"edge_attenuation", c.image_filter.edge_attenuation},
        {"edge_blur_sigma", c.edge_blur_sigma},
        {"consistency_epsilon", c.consistency_epsilon}}},
      {"srie",
       {{"voxel_bins", c.voxel_bins},
        {"snr_epsilon_image", c.snr_epsilon_image},
        {"snr_epsilon_event", c.snr_epsilon_event},
        {"kernel_size", c.fusion.kernel_size},
        {"temperature", c.fusion.temperature}}},
      {"cad",
       {{"patch", c.patch},
        {"diffusion_steps", c.diffusion_steps},
        {"sampling_steps", c.sampling_steps},
        {"beta_min", c.beta_min},
        {"beta_max", c.beta_max},
        {"predictor", c.predictor},
        {"train_scenes", c.train_scenes}}},
      {"benchmark", {{"test_scenes", c.test_scenes}}},
      {"ablation",
       {{"disable_ecns", c.ablation.disable_ecns},
        {"disable_srie", c.ablation.disable_srie},
        {"disable_cad", c.ablation.disable_cad},
        {"image_snr_only_fusion", c.ablation.fusion == FusionMode::kImageSnrOnly},
        {"direct_fusion", c.ablation.fusion == FusionMode::kDirect}}},
  };
}

// ---------------------------------------------------------------------------
// Inputs

std::uint64_t train_scene_seed(std::uint64_t seed, int index) {
  return derive_seed(seed, kTagTrainScene, static_cast<std::uint64_t>(index));
}

std::uint64_t test_scene_seed(std::uint64_t seed, int index) {
  return derive_seed(seed, kTagTestScene, static_cast<std::uint64_t>(index));
}

double exposure_scale_for(const std::optional<sim::RawFrame>& reference, const sim::RawFrame& fallback) {
  const double peak = reference ? reference->values.maxCoeff() : percentile(fallback.values, 99.5);
  return peak > 0.0 ? 1.0 / peak : 1.0;
}

SceneInputs scene_inputs_from(const PipelineConfig& cfg, const sim::Scene& scene, std::uint64_t scene_seed,
                              const std::string& id) {
  const sim::RadianceSequence& seq = scene.radiance;
  SceneInputs in;
  in.id = id;
  in.t0 = seq.time(0);
  in.t1 = seq.time(seq.size() - 1);
  const TimeNs exposure = in.t1 - in.t0;

  in.raw = sim::synthesize_raw(seq.frame(seq.size() - 1), cfg.raw_noise, derive_seed(scene_seed, kTagRawT, 0), in.t1);
  in.raw_prev = sim::synthesize_raw(seq.frame(0), cfg.raw_noise, derive_seed(scene_seed, kTagRawPrev, 0), in.t0);
  in.raw.exposure_ns = in.raw_prev.exposure_ns = exposure;

  sim::RawFrame gt = sim::clean_raw(seq.frame(seq.size() - 1), cfg.raw_noise.gain, in.t1);
  gt.black_level = cfg.raw_noise.black_level;
  gt.exposure_ns = exposure;

  // Background activity follows the true (noise-free) illumination.
  const sim::EventStream ideal = sim::generate_ideal_events(seq, cfg.contrast_threshold, cfg.photoreceptor_bias);
  in.events = sim::inject_ba_noise(ideal, sim::IlluminationMap{gt.values}, cfg.ba, {in.t0, in.t1},
                                   derive_seed(scene_seed, kTagBa, 0));

  in.ground_truth = std::move(gt);
  in.regions = scene.regions;
  in.exposure_scale = exposure_scale_for(in.ground_truth, in.raw);
  return in;
}

SceneInputs simulate_scene(const PipelineConfig& cfg, std::uint64_t scene_seed, const std::string& id) {
  return scene_inputs_from(cfg, sim::make_scene(cfg.scene, scene_seed), scene_seed, id);
}

void save_scene_inputs(const std::filesystem::path& dir, const SceneInputs& in) {
  std::filesystem::create_directories(dir);
  io::write_events(dir / "events.evt", in.events);
  io::write_raw(dir / "raw.pgm", in.raw);
  io::write_raw(dir / "raw_prev.pgm", in.raw_prev);
  if (in.ground_truth) {
    // Fractional DN survive through the affine map; RAW codes would round them.
    io::write_map(dir / "gt.pgm", in.ground_truth->values, 0.0, std::ceil(in.ground_truth->values.maxCoeff()) + 1.0,
                  "ground_truth_dn");
  }
  if (in.regions) io::write_map(dir / "regions.pgm", in.regions->cast<double>(), 0.0, 65535.0, "region_label");
  io::write_json(dir / "scene.json", {{"id", in.id}, {"t0_ns", in.t0}, {"t1_ns", in.t1}});
}

SceneInputs load_scene_inputs(const std::filesystem::path& dir) {
  SceneInputs in;
  in.events = io::read_events(dir / "events.evt");
  in.raw = io::read_raw(dir / "raw.pgm");
  in.raw_prev = io::read_raw(dir / "raw_prev.pgm");
  in.id = dir.filename().string();
  in.t0 = in.raw_prev.timestamp;
  in.t1 = in.raw.timestamp;
  if (std::filesystem::exists(dir / "scene.json")) {
    const json j = io::read_json(dir / "scene.json");
    try {
      in.id = j.value("id", in.id);
      in.t0 = j.value("t0_ns", in.t0);
      in.t1 = j.value("t1_ns", in.t1);
    } catch (const json::exception& e) {
      throw FormatError("scene.json: " + std::string(e.what()));
    }
  }
  if (in.t1 <= in.t0) throw FormatError("scene: event window is empty");
  if (std::filesystem::exists(dir / "gt.pgm")) {
    sim::RawFrame gt = in.raw;
    gt.values = io::read_map(dir / "gt.pgm");
    in.ground_truth = std::move(gt);
  }
  if (std::filesystem::exists(dir / "regions.pgm")) {
    in.regions = io::read_map(dir / "regions.pgm").round().cast<int>();
  }
  in.exposure_scale = exposure_scale_for(in.ground_truth, in.raw);
  return in;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

sim::RawFrame clamp_nonneg(sim::RawFrame f) {
  f.values = f.values.max(0.0);
  return f;
}

constexpr double kMinRangeSigma = 1e-3;  // DN

}  // namespace

denoise::ImageFilterParams image_filter_for(const PipelineConfig& cfg, const sim::RawFrame& raw) {
  denoise::ImageFilterParams p = cfg.image_filter;
  if (cfg.range_sigma_per_noise_std > 0.0) {
    // Quantization is left out: rounding steps are not what the filter should smooth.
    const sim::RawNoiseParams& n = cfg.raw_noise;
    double var = 0.0;
    if (n.shot_noise) var += n.gain * std::max(0.0, percentile(raw.values, 50.0));
    if (n.read_noise) var += n.read_sigma * n.read_sigma;
    p.range_sigma = std::max(kMinRangeSigma, cfg.range_sigma_per_noise_std * std::sqrt(var));
  }
  return p;
}

EcnsOutput run_ecns(const PipelineConfig& cfg, const SceneInputs& in) {
  EcnsOutput out;
  out.illumination = sim::gaussian_blur_illumination(in.raw, cfg.illumination_sigma);
  if (cfg.ablation.disable_ecns) {
    out.events = in.events;
    out.edge = denoise::event_edge_map(in.events, {in.t0, in.t1}, cfg.edge_blur_sigma);
    out.raw = clamp_nonneg(in.raw);
    out.raw_prev = clamp_nonneg(in.raw_prev);
  } else {
    out.events = denoise::denoise_events(in.events, out.illumination, cfg.ba, cfg.event_filter);
    out.edge = denoise::event_edge_map(out.events, {in.t0, in.t1}, cfg.edge_blur_sigma);
    out.raw = denoise::denoise_raw(in.raw, out.edge, image_filter_for(cfg, in.raw));
    out.raw_prev = denoise::denoise_raw(in.raw_prev, out.edge, image_filter_for(cfg, in.raw_prev));
  }
  const EventCountMap accum = sim::accumulate_events(out.events, in.t0, in.t1);
  out.consistency_loss = denoise::intensity_consistency_loss(
      accum, out.raw, out.raw_prev, {cfg.contrast_threshold, cfg.consistency_epsilon});
  return out;
}

SrieOutput run_srie(const PipelineConfig& cfg, const SceneInputs& in, const EcnsOutput& ecns) {
  SrieOutput out;
  const sim::VoxelGrid vox_in = sim::voxelize(in.events, cfg.voxel_bins, {in.t0, in.t1});
  const sim::VoxelGrid vox_den = sim::voxelize(ecns.events, cfg.voxel_bins, {in.t0, in.t1});
  out.snr_image = fusion::snr_map(in.raw.values.max(0.0), ecns.raw.values, cfg.snr_epsilon_image);
  out.snr_event = fusion::snr_map(vox_in.magnitude(), vox_den.magnitude(), cfg.snr_epsilon_event);

  const int h = in.raw.height();
  const int w = in.raw.width();
  if (cfg.ablation.disable_srie) {
    out.weights = fusion::constant_weights(h, w, 1.0, 1.0);
  } else {
    switch (cfg.ablation.fusion) {
      case FusionMode::kDualSnr:
        out.weights = fusion::fusion_weights(out.snr_image, out.snr_event, cfg.fusion);
        break;
      case FusionMode::kImageSnrOnly: {
        // Image SNR against a flat event reference at its median level.
        const double ref = percentile(out.snr_image.values, 50.0);
        fusion::SnrMap flat{Image::Constant(h, w, ref)};
        out.weights = fusion::fusion_weights(out.snr_image, flat, cfg.fusion);
        break;
      }
      case FusionMode::kDirect:
        out.weights = fusion::constant_weights(h, w, 0.5, 0.5);
        break;
    }
  }

  out.image_weighted =
      fusion::apply_weights(fusion::encode_features(Image(ecns.raw.values * in.exposure_scale)), out.weights.image);
  out.event_weighted = fusion::apply_weights(fusion::encode_features(vox_den), out.weights.event);
  return out;
}

fusion::FeatureMap conditioning(const PipelineConfig& cfg, const SrieOutput& srie) {
  const auto attended = attention::cross_attention(srie.image_weighted, srie.event_weighted,
                                                   derive_seed(cfg.seed, kTagProjection, 0), cfg.patch);
  return attention::fuse_skip(attended);
}

diffusion::LatentImage to_latent(const Image& linear, double exposure_scale) {
  return 2.0 * (linear * exposure_scale).max(0.0).min(1.0) - 1.0;
}

Image from_latent(const diffusion::LatentImage& latent, double exposure_scale) {
  return ((latent + 1.0) * 0.5).max(0.0).min(1.0) / exposure_scale;
}

metrics::ImageMetrics evaluate_reconstruction(const std::string& id, const Image& reconstruction,
                                             const sim::RawFrame& reference, double exposure_scale,
                                             double consistency_loss) {
  const Image pred = io::tone_map(reconstruction, exposure_scale);
  const Image gt = io::tone_map(reference.values, exposure_scale);
  metrics::ImageMetrics m;
  m.image_id = id;
  m.psnr_db = metrics::psnr(pred, gt, 1.0);
  m.ssim = metrics::ssim(pred, gt, 1.0);
  m.l_rec = metrics::rec_loss(pred, gt);
  m.l_grad = metrics::grad_loss(pred, gt);
  m.l_cons = consistency_loss;
  m.l_total = metrics::total_loss(m.l_rec, m.l_grad, m.l_cons);
  return m;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const SceneInputs& in,
                            const diffusion::NoisePredictor* predictor) {
  cfg.validate();
  require_same_shape(in.raw.values, in.raw_prev.values, "run_pipeline: raw frames");
  if (in.events.width != in.raw.width() || in.events.height != in.raw.height()) {
    throw InputDomainError("run_pipeline: event stream and RAW frame sizes differ");
  }

  PipelineResult res;
  res.ecns = run_ecns(cfg, in);
  if (cfg.ablation.disable_cad) {
    res.reconstruction = res.ecns.raw.values;
  } else {
    if (predictor == nullptr) throw PipelineError("run_pipeline: reconstruction needs a noise predictor");
    res.srie = run_srie(cfg, in, res.ecns);
    const fusion::FeatureMap cond = conditioning(cfg, *res.srie);
    const diffusion::DiffusionSchedule schedule = cfg.schedule();
    // Start from the mode of the prior: with eta = 0 the sampler then follows the
    // predictor's conditional-mean path instead of returning one posterior draw.
    const diffusion::LatentImage x_T = diffusion::LatentImage::Zero(in.raw.height(), in.raw.width());
    const diffusion::LatentImage x0 = diffusion::ddim_sample(x_T, cond, *predictor, schedule);
    res.reconstruction = from_latent(x0, in.exposure_scale);
  }
  res.display = io::tone_map_8bit(res.reconstruction, in.exposure_scale);
  if (in.ground_truth) {
    res.metrics = evaluate_reconstruction(in.id, res.reconstruction, *in.ground_truth, in.exposure_scale,
                                          res.ecns.consistency_loss);
    res.input_psnr_db = metrics::psnr(io::tone_map(in.raw.values, in.exposure_scale),
                                      io::tone_map(in.ground_truth->values, in.exposure_scale), 1.0);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Training and benchmark

namespace {

constexpr int kDrawsPerBucket = 2;

}  // namespace

std::unique_ptr<diffusion::NoisePredictor> train_predictor(const PipelineConfig& cfg) {
  cfg.validate();
  if (cfg.predictor == "zero") return std::make_unique<diffusion::ZeroPredictor>();

  const diffusion::DiffusionSchedule schedule = cfg.schedule();
  const int buckets = diffusion::ConditionalLinearPredictor::kDefaultBuckets;
  std::vector<diffusion::TrainingSample> samples;
  samples.reserve(static_cast<std::size_t>(cfg.train_scenes) * buckets * kDrawsPerBucket);
  for (int s = 0; s < cfg.train_scenes; ++s) {
    const std::uint64_t scene_seed = train_scene_seed(cfg.seed, s);
    const SceneInputs in = simulate_scene(cfg, scene_seed, "train_" + std::to_string(s));
    const EcnsOutput ecns = run_ecns(cfg, in);
    const SrieOutput srie = run_srie(cfg, in, ecns);
    const fusion::FeatureMap cond = conditioning(cfg, srie);
    const diffusion::LatentImage x0 = to_latent(in.ground_truth->values, in.exposure_scale);

    CounterRng pick(scene_seed, stream_id(RngDomain::kDiffusion, derive_seed(0, kTagTrainStep, 0)));
    for (int b = 0; b < buckets; ++b) {
      // Timesteps drawn uniformly inside bucket b's share of [1, T].
      const int lo = 1 + static_cast<int>(static_cast<long long>(b) * schedule.num_steps / buckets);
      const int hi = static_cast<int>(static_cast<long long>(b + 1) * schedule.num_steps / buckets);
      for (int d = 0; d < kDrawsPerBucket; ++d) {
        const int t = lo + static_cast<int>(pick() % static_cast<std::uint64_t>(std::max(1, hi - lo + 1)));
        const std::uint64_t noise_seed =
            derive_seed(scene_seed, kTagTrainNoise, static_cast<std::uint64_t>(b * kDrawsPerBucket + d));
        diffusion::TrainingSample sample;
        sample.t = t;
        sample.x_t = diffusion::forward_diffuse(x0, t, schedule, noise_seed);
        const double ab = schedule.alpha_bar(t);
        sample.eps = (sample.x_t - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
        sample.cond = cond;
        samples.push_back(std::move(sample));
      }
    }
  }
  return std::make_unique<diffusion::ConditionalLinearPredictor>(
      diffusion::ConditionalLinearPredictor::fit(samples, schedule, buckets));
}

BenchmarkResult run_benchmark(const PipelineConfig& cfg, bool with_fusion_ablation) {
  cfg.validate();
  BenchmarkResult out;

  std::vector<SceneInputs>& scenes = out.scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.test_scenes));
  for (int i = 0; i < cfg.test_scenes; ++i) {
    scenes.push_back(simulate_scene(cfg, test_scene_seed(cfg.seed, i), "scene_" + std::to_string(i)));
  }

  if (!cfg.ablation.disable_cad) out.predictor = train_predictor(cfg);
  for (const SceneInputs& in : scenes) {
    PipelineResult r = run_pipeline(cfg, in, out.predictor.get());
    out.report.images.push_back(*r.metrics);
    out.mean_psnr += r.metrics->psnr_db / cfg.test_scenes;
    out.mean_input_psnr += r.input_psnr_db / cfg.test_scenes;
    out.results.push_back(std::move(r));
  }

  if (with_fusion_ablation) {
    for (FusionMode mode : {FusionMode::kDualSnr, FusionMode::kImageSnrOnly, FusionMode::kDirect}) {
      PipelineConfig variant = cfg;
      variant.ablation.fusion = mode;
      const auto pred = variant.ablation.disable_cad ? nullptr : train_predictor(variant);
      double mean = 0.0;
      for (std::size_t i = 0; i < scenes.size(); ++i) {
        const PipelineResult r = run_pipeline(variant, scenes[i], pred.get());
        out.report.images[i].ablation_psnr[to_string(mode)] = r.metrics->psnr_db;
        mean += r.metrics->psnr_db / cfg.test_scenes;
      }
      (mode == FusionMode::kDualSnr       ? out.mean_psnr_dual
       : mode == FusionMode::kImageSnrOnly ? out.mean_psnr_image_only
                                           : out.mean_psnr_direct) = mean;
    }
  }

  out.report.metadata["seed"] = std::to_string(cfg.seed);
  out.report.metadata["fusion"] = to_string(cfg.ablation.fusion);
  out.report.metadata["test_scenes"] = std::to_string(cfg.test_scenes);
  return out;
}

DatasetEvaluation evaluate_dataset(const std::filesystem::path& pred_dir, const std::filesystem::path& ref_dir) {
  auto list = [](const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw PipelineError("evaluate: not a directory: " + dir.string());
    std::set<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") names.insert(entry.path().filename().string());
    }
    return names;
  };
  const std::set<std::string> pred = list(pred_dir);
  const std::set<std::string> ref = list(ref_dir);

  DatasetEvaluation out;
  std::vector<std::string> matched;
  std::set_intersection(pred.begin(), pred.end(), ref.begin(), ref.end(), std::back_inserter(matched));
  std::set_symmetric_difference(pred.begin(), pred.end(), ref.begin(), ref.end(), std::back_inserter(out.unmatched));
  if (matched.empty()) throw PipelineError("evaluate: no matching file names");

  for (const std::string& name : matched) {
    const io::Pgm a = io::read_pgm(pred_dir / name);
    const io::Pgm b = io::read_pgm(ref_dir / name);
    const Image pa = a.values / a.maxval;
    const Image pb = b.values / b.maxval;
    require_same_shape(pa, pb, ("evaluate: " + name).c_str());
    metrics::ImageMetrics m;
    m.image_id = std::filesystem::path(name).stem().string();
    m.psnr_db = metrics::psnr(pa, pb, 1.0);
    m.ssim = metrics::ssim(pa, pb, 1.0);
    m.l_rec = metrics::rec_loss(pa, pb);
    m.l_grad = metrics::grad_loss(pa, pb);
    m.l_total = metrics::total_loss(m.l_rec, m.l_grad, m.l_cons);
    out.report.images.push_back(std::move(m));
  }
  out.report.metadata["pred_dir"] = pred_dir.string();
  out.report.metadata["ref_dir"] = ref_dir.string();
  return out;
}

}  // namespace evraw::pipeline
