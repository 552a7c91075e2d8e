// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <evraw/core.hpp>

#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace evraw::metrics {

/// PSNR of identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();
/// Value written to CSV in place of +inf.
inline constexpr double kPsnrCsvSentinel = 99.0;

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

double mse(const Image& a, const Image& b);

/// 10 log10(peak^2 / MSE); +inf for identical inputs.
double psnr(const Image& a, const Image& b, double peak);

/// Mean local SSIM over all fully-contained Gaussian windows; dynamic range = peak.
double ssim(const Image& a, const Image& b, double peak, const SsimParams& params = {});

/// mean |pred - gt|.
double rec_loss(const Image& pred, const Image& gt);

/// mean over both Sobel components of |S(pred) - S(gt)|.
double grad_loss(const Image& pred, const Image& gt);

struct LossWeights {
  double grad = 10.0;
  double cons = 0.5;
};

/// rec + lambda_grad * grad + lambda_cons * cons.
double total_loss(double rec, double grad, double cons, const LossWeights& weights = {});

struct RegionMean {
  int label = 0;
  double mean = 0.0;
  std::size_t count = 0;
  bool empty = true;  ///< no pixel carried this label; `mean` is meaningless
};

/// Mean of `values` over each label in [0, num_labels); negative labels are ignored.
std::vector<RegionMean> region_snr_stats(const Image& snr,
                                         const Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& labels,
                                         int num_labels);

double pearson(const std::vector<double>& a, const std::vector<double>& b);
/// Pearson correlation of average ranks.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct ImageMetrics {
  std::string image_id;
  double psnr_db = 0.0;
  double ssim = 0.0;
  double l_rec = 0.0;
  double l_grad = 0.0;
  double l_cons = 0.0;
  double l_total = 0.0;
  std::map<std::string, double> ablation_psnr;  ///< one column per ablation mode
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
};

struct MetricReport {
  std::vector<ImageMetrics> images;
  std::map<std::string, std::string> metadata;

  Aggregate aggregate(double ImageMetrics::*field) const;
  Aggregate aggregate_ablation(const std::string& mode) const;
  /// Header: image_id,psnr_db,ssim,l_rec,l_grad,l_cons,l_total,psnr_<mode>...
  /// followed by one row per image and "mean" / "std" rows.
  std::string to_csv() const;
};

}  // namespace evraw::metrics
