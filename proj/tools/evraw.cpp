// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// evraw: simulate / denoise / snr / fuse / reconstruct / eval / pipeline.
//
// Exit codes: 0 success, 2 format error, 3 config error, 4 pipeline error.

#include <evraw/attention.hpp>
#include <evraw/core.hpp>
#include <evraw/diffusion.hpp>
#include <evraw/io.hpp>
#include <evraw/metrics.hpp>
#include <evraw/pipeline.hpp>

#include <CLI11.hpp>

#include <bit>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

namespace fs = std::filesystem;
using namespace evraw;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kFormat = 2, kConfig = 3, kPipeline = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  int threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "Seed (overrides the config)");
  cmd->add_option("--out-dir", c.out_dir, "Output directory");
  cmd->add_option("--threads", c.threads, "Worker threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
}

pipeline::PipelineConfig load_config(const Common& c) {
  pipeline::PipelineConfig cfg;
  if (!c.config.empty()) {
    json j;
    try {
      j = io::read_json(c.config);
    } catch (const FormatError& e) {
      throw ConfigError(std::string("config file: ") + e.what());
    }
    cfg = pipeline::config_from_json(j);
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  if (c.threads > 0) set_num_threads(c.threads);
  fs::create_directories(c.out_dir);
  return cfg;
}

double mean(const Image& a) { return a.size() ? a.mean() : 0.0; }

json provenance_stats(const sim::EventStream& before, const sim::EventStream& after) {
  auto count = [](const sim::EventStream& s, sim::Provenance p) {
    return static_cast<std::size_t>(std::count_if(s.events.begin(), s.events.end(),
                                                  [p](const sim::Event& e) { return e.provenance == p; }));
  };
  json j = {{"input_events", before.size()}, {"kept_events", after.size()}};
  const std::size_t sig = count(before, sim::Provenance::kSignal);
  const std::size_t noise = count(before, sim::Provenance::kNoise);
  if (sig > 0) j["signal_recall"] = static_cast<double>(count(after, sim::Provenance::kSignal)) / sig;
  if (noise > 0) j["noise_removal"] = 1.0 - static_cast<double>(count(after, sim::Provenance::kNoise)) / noise;
  return j;
}

void write_weights(const fs::path& dir, const fusion::WeightMap& w) {
  io::write_map(dir / "weights_image.pgm", w.image, 0.0, 1.0, "weight_image");
  io::write_map(dir / "weights_event.pgm", w.event, 0.0, 1.0, "weight_event");
}

/// Little-endian float64 dump, channel-major, rows within a channel row-major.
void write_features(const fs::path& path, const fusion::FeatureMap& f) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(f.data.size()) * 8);
  for (Eigen::Index c = 0; c < f.data.rows(); ++c) {
    for (Eigen::Index i = 0; i < f.data.cols(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(f.data(c, i));
      for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
  }
  io::write_text(path, bytes);
  io::write_json(io::sidecar_path(path), {{"channels", f.channels()},
                                          {"height", f.height},
                                          {"width", f.width},
                                          {"dtype", "float64le"},
                                          {"layout", "channel, row, column"}});
}

json report_json(const metrics::MetricReport& report) {
  json j;
  j["metadata"] = report.metadata;
  j["mean_psnr_db"] = report.aggregate(&metrics::ImageMetrics::psnr_db).mean;
  j["mean_ssim"] = report.aggregate(&metrics::ImageMetrics::ssim).mean;
  j["images"] = report.images.size();
  return j;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const Common& c, int index, const std::string& split, const std::string& radiance_dir) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const bool train = split == "train";
  const std::uint64_t scene_seed =
      train ? pipeline::train_scene_seed(cfg.seed, index) : pipeline::test_scene_seed(cfg.seed, index);
  const std::string id = split + "_" + std::to_string(index);
  pipeline::SceneInputs in;
  if (radiance_dir.empty()) {
    in = pipeline::simulate_scene(cfg, scene_seed, id);
  } else {
    sim::RadianceSequence seq = io::read_radiance_dir(radiance_dir);
    sim::LabelMap labels = sim::LabelMap::Zero(seq.frame(0).rows(), seq.frame(0).cols());
    in = pipeline::scene_inputs_from(cfg, sim::Scene{std::move(seq), std::move(labels)}, scene_seed, id);
  }
  pipeline::save_scene_inputs(c.out_dir, in);
  io::write_events_csv(fs::path(c.out_dir) / "events.csv", in.events);
  return kOk;
}

int cmd_denoise(const Common& c, const std::string& in_dir) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const pipeline::SceneInputs in = pipeline::load_scene_inputs(in_dir);
  const pipeline::EcnsOutput ecns = pipeline::run_ecns(cfg, in);
  const fs::path out = c.out_dir;
  io::write_events(out / "events_denoised.evt", ecns.events);
  io::write_raw(out / "raw_denoised.pgm", ecns.raw);
  io::write_raw(out / "raw_prev_denoised.pgm", ecns.raw_prev);
  io::write_map(out / "edge.pgm", ecns.edge.values, 0.0, 1.0, "event_edge");
  io::write_map(out / "illumination.pgm", ecns.illumination.values, 0.0,
                std::max(1.0, std::ceil(ecns.illumination.values.maxCoeff())), "illumination_dn");
  json j = provenance_stats(in.events, ecns.events);
  j["consistency_loss"] = ecns.consistency_loss;
  io::write_json(out / "denoise.json", j);
  return kOk;
}

int cmd_snr(const Common& c, const std::string& in_dir) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const pipeline::SceneInputs in = pipeline::load_scene_inputs(in_dir);
  const pipeline::EcnsOutput ecns = pipeline::run_ecns(cfg, in);
  const pipeline::SrieOutput srie = pipeline::run_srie(cfg, in, ecns);
  const fs::path out = c.out_dir;
  io::write_map(out / "snr_image.pgm", srie.snr_image.values, -fusion::kSnrClampDb, fusion::kSnrClampDb, "snr_db");
  io::write_map(out / "snr_event.pgm", srie.snr_event.values, -fusion::kSnrClampDb, fusion::kSnrClampDb, "snr_db");
  write_weights(out, srie.weights);
  json j = {{"mean_snr_image_db", mean(srie.snr_image.values)},
            {"mean_snr_event_db", mean(srie.snr_event.values)},
            {"mean_weight_image", mean(srie.weights.image)}};
  if (in.regions) {
    const int labels = in.regions->maxCoeff() + 1;
    json regions = json::array();
    const auto img = metrics::region_snr_stats(srie.snr_image.values, *in.regions, labels);
    const auto evt = metrics::region_snr_stats(srie.snr_event.values, *in.regions, labels);
    for (int r = 0; r < labels; ++r) {
      if (img[r].empty) continue;
      regions.push_back({{"label", r},
                         {"pixels", img[r].count},
                         {"mean_snr_image_db", img[r].mean},
                         {"mean_snr_event_db", evt[r].mean}});
    }
    j["regions"] = regions;
  }
  io::write_json(out / "snr.json", j);
  return kOk;
}

int cmd_fuse(const Common& c, const std::string& in_dir) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const pipeline::SceneInputs in = pipeline::load_scene_inputs(in_dir);
  const pipeline::EcnsOutput ecns = pipeline::run_ecns(cfg, in);
  const pipeline::SrieOutput srie = pipeline::run_srie(cfg, in, ecns);
  const fusion::FeatureMap cond = pipeline::conditioning(cfg, srie);
  const fs::path out = c.out_dir;
  write_weights(out, srie.weights);
  write_features(out / "conditioning.bin", cond);
  io::write_json(out / "fuse.json", {{"fusion", pipeline::to_string(cfg.ablation.fusion)},
                                     {"channels", cond.channels()},
                                     {"mean_weight_image", mean(srie.weights.image)},
                                     {"conditioning_rms", std::sqrt(cond.data.squaredNorm() / cond.data.size())}});
  return kOk;
}

int cmd_reconstruct(const Common& c, const std::string& in_dir, const std::string& predictor_path) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const pipeline::SceneInputs in = pipeline::load_scene_inputs(in_dir);
  const fs::path out = c.out_dir;
  std::unique_ptr<diffusion::NoisePredictor> predictor;
  if (!cfg.ablation.disable_cad) {
    if (!predictor_path.empty()) {
      try {
        predictor = diffusion::predictor_from_json(io::read_json(predictor_path));
      } catch (const json::exception& e) {
        throw FormatError("predictor: " + std::string(e.what()));
      }
    } else {
      predictor = pipeline::train_predictor(cfg);
      io::write_json(out / "predictor.json", predictor->to_json());
    }
  }
  const pipeline::PipelineResult res = pipeline::run_pipeline(cfg, in, predictor.get());
  io::write_pgm(out / "recon.pgm", res.display, 255);
  sim::RawFrame linear = in.raw;
  linear.values = res.reconstruction;
  io::write_raw(out / "recon_linear.pgm", linear);

  metrics::MetricReport report;
  report.metadata = {{"id", in.id},
                     {"gain", std::to_string(in.raw.gain)},
                     {"black_level", std::to_string(in.raw.black_level)},
                     {"seed", std::to_string(cfg.seed)},
                     {"fusion", pipeline::to_string(cfg.ablation.fusion)}};
  if (res.metrics) {
    report.images.push_back(*res.metrics);
    io::write_text(out / "metrics.csv", report.to_csv());
  }
  json j = report_json(report);
  j["consistency_loss"] = res.ecns.consistency_loss;
  if (res.metrics) j["input_psnr_db"] = res.input_psnr_db;
  io::write_json(out / "report.json", j);
  return kOk;
}

int cmd_eval(const Common& c, const std::string& pred_dir, const std::string& ref_dir) {
  load_config(c);
  const pipeline::DatasetEvaluation ev = pipeline::evaluate_dataset(pred_dir, ref_dir);
  io::write_text(fs::path(c.out_dir) / "metrics.csv", ev.report.to_csv());
  json j = report_json(ev.report);
  j["unmatched"] = ev.unmatched;
  io::write_json(fs::path(c.out_dir) / "report.json", j);
  for (const std::string& name : ev.unmatched) std::cerr << "unmatched: " << name << "\n";
  return ev.unmatched.empty() ? kOk : kPipeline;
}

int cmd_pipeline(const Common& c, bool ablation_columns) {
  const pipeline::PipelineConfig cfg = load_config(c);
  const pipeline::BenchmarkResult bench = pipeline::run_benchmark(cfg, ablation_columns);
  const fs::path out = c.out_dir;
  for (const char* sub : {"recon", "ref", "input"}) fs::create_directories(out / sub);
  for (std::size_t i = 0; i < bench.scenes.size(); ++i) {
    const pipeline::SceneInputs& in = bench.scenes[i];
    const std::string name = in.id + ".pgm";
    io::write_pgm(out / "recon" / name, bench.results[i].display, 255);
    io::write_pgm(out / "ref" / name, io::tone_map_8bit(in.ground_truth->values, in.exposure_scale), 255);
    io::write_pgm(out / "input" / name, io::tone_map_8bit(in.raw.values, in.exposure_scale), 255);
  }
  io::write_text(out / "metrics.csv", bench.report.to_csv());
  io::write_json(out / "config.json", pipeline::config_to_json(cfg));
  if (bench.predictor) io::write_json(out / "predictor.json", bench.predictor->to_json());
  json j = report_json(bench.report);
  j["mean_input_psnr_db"] = bench.mean_input_psnr;
  if (ablation_columns) {
    j["mean_psnr_db_by_fusion"] = {{"dual_snr", bench.mean_psnr_dual},
                                   {"image_snr_only", bench.mean_psnr_image_only},
                                   {"direct", bench.mean_psnr_direct}};
  }
  io::write_json(out / "report.json", j);
  std::cout << "mean PSNR " << bench.mean_psnr << " dB (input " << bench.mean_input_psnr << " dB) over "
            << bench.scenes.size() << " scenes\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-light RAW + event reconstruction toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string in_dir;
  int scene_index = 0;
  std::string split = "test";
  std::string radiance_dir;
  std::string predictor_path;
  std::string pred_dir;
  std::string ref_dir;
  bool ablation_columns = true;

  auto* simulate = app.add_subcommand("simulate", "Synthesize one scene: events, RAW frames, ground truth");
  add_common(simulate, common);
  simulate->add_option("--scene-index", scene_index, "Scene index within the split")->check(CLI::NonNegativeNumber);
  simulate->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
  simulate->add_option("--radiance-dir", radiance_dir, "Radiance sequence directory (replaces the procedural scene)");

  auto* denoise = app.add_subcommand("denoise", "Collaborative event / RAW noise suppression");
  auto* snr = app.add_subcommand("snr", "SNR maps and fusion weights");
  auto* fuse = app.add_subcommand("fuse", "Weighted features and cross-attention conditioning");
  auto* reconstruct = app.add_subcommand("reconstruct", "DDIM reconstruction of one scene");
  for (CLI::App* cmd : {denoise, snr, fuse, reconstruct}) {
    add_common(cmd, common);
    cmd->add_option("--in-dir", in_dir, "Scene directory written by 'simulate'")->required();
  }
  reconstruct->add_option("--predictor", predictor_path, "Fitted predictor JSON (trained from the config if absent)");

  auto* eval = app.add_subcommand("eval", "Compare same-named PGM images in two directories");
  add_common(eval, common);
  eval->add_option("--pred-dir", pred_dir, "Predictions")->required();
  eval->add_option("--ref-dir", ref_dir, "References")->required();

  auto* run = app.add_subcommand("pipeline", "Train, reconstruct and evaluate the synthetic benchmark");
  add_common(run, common);
  run->add_flag("--ablation-columns,!--no-ablation-columns", ablation_columns,
                "Also evaluate every fusion mode (default on)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*simulate) return cmd_simulate(common, scene_index, split, radiance_dir);
    if (*denoise) return cmd_denoise(common, in_dir);
    if (*snr) return cmd_snr(common, in_dir);
    if (*fuse) return cmd_fuse(common, in_dir);
    if (*reconstruct) return cmd_reconstruct(common, in_dir, predictor_path);
    if (*eval) return cmd_eval(common, pred_dir, ref_dir);
    if (*run) return cmd_pipeline(common, ablation_columns);
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kPipeline;
  }
  return kPipeline;
}
