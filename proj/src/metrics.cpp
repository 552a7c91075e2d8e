// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/metrics.hpp>

#include <evraw/filters.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace evraw::metrics {

namespace {

/// Correlation with a "valid" region only: output is (h - n + 1) x (w - n + 1).
Image filter_valid(const Image& src, const std::vector<double>& k) {
  const auto n = static_cast<Eigen::Index>(k.size());
  const Eigen::Index h = src.rows(), w = src.cols();
  Image tmp(h, w - n + 1), out(h - n + 1, w - n + 1);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x + n <= w; ++x) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) acc += k[i] * src(y, x + i);
      tmp(y, x) = acc;
    }
  }
  for (Eigen::Index y = 0; y + n <= h; ++y) {
    for (Eigen::Index x = 0; x < tmp.cols(); ++x) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) acc += k[i] * tmp(y + i, x);
      out(y, x) = acc;
    }
  }
  return out;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::string format_number(double v) {
  std::ostringstream os;
  os.precision(10);
  os << (std::isinf(v) && v > 0 ? kPsnrCsvSentinel : v);
  return os.str();
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  return (a - b).square().mean();
}

double psnr(const Image& a, const Image& b, double peak) {
  if (!(peak > 0.0)) throw InputDomainError("psnr: peak must be > 0");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(peak * peak / m);
}

double ssim(const Image& a, const Image& b, double peak, const SsimParams& params) {
  require_same_shape(a, b, "ssim");
  if (a.rows() < params.window || a.cols() < params.window) {
    throw InputDomainError("ssim: image smaller than the " + std::to_string(params.window) + "x" +
                           std::to_string(params.window) + " window");
  }
  std::vector<double> k(params.window);
  const int r = params.window / 2;
  double sum = 0.0;
  for (int i = 0; i < params.window; ++i) {
    k[i] = std::exp(-0.5 * (i - r) * (i - r) / (params.sigma * params.sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  const double c1 = (params.k1 * peak) * (params.k1 * peak);
  const double c2 = (params.k2 * peak) * (params.k2 * peak);

  const Image mu_a = filter_valid(a, k), mu_b = filter_valid(b, k);
  const Image var_a = filter_valid(a * a, k) - mu_a.square();
  const Image var_b = filter_valid(b * b, k) - mu_b.square();
  const Image cov = filter_valid(a * b, k) - mu_a * mu_b;
  const Image map = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                    ((mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2));
  return map.mean();
}

double rec_loss(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "rec_loss");
  return (pred - gt).abs().mean();
}

double grad_loss(const Image& pred, const Image& gt) {
  require_same_shape(pred, gt, "grad_loss");
  Image px, py, gx, gy;
  sobel(pred, px, py);
  sobel(gt, gx, gy);
  return 0.5 * ((px - gx).abs().mean() + (py - gy).abs().mean());
}

double total_loss(double rec, double grad, double cons, const LossWeights& weights) {
  if (!std::isfinite(rec) || !std::isfinite(grad) || !std::isfinite(cons)) {
    throw InputDomainError("total_loss: non-finite component");
  }
  if (!(weights.grad >= 0.0) || !(weights.cons >= 0.0)) {
    throw InputDomainError("total_loss: weights must be >= 0");
  }
  return rec + weights.grad * grad + weights.cons * cons;
}

std::vector<RegionMean> region_snr_stats(
    const Image& snr, const Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& labels,
    int num_labels) {
  require_same_shape(snr, labels, "region_snr_stats");
  std::vector<RegionMean> out(num_labels);
  std::vector<double> sums(num_labels, 0.0);
  for (Eigen::Index i = 0; i < snr.size(); ++i) {
    const int l = labels.data()[i];
    if (l < 0 || l >= num_labels) continue;
    sums[l] += snr.data()[i];
    ++out[l].count;
  }
  for (int l = 0; l < num_labels; ++l) {
    out[l].label = l;
    out[l].empty = out[l].count == 0;
    out[l].mean = out[l].empty ? 0.0 : sums[l] / static_cast<double>(out[l].count);
  }
  return out;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw InputDomainError("pearson: need >= 2 paired values");
  const Eigen::Map<const Eigen::ArrayXd> x(a.data(), static_cast<Eigen::Index>(a.size()));
  const Eigen::Map<const Eigen::ArrayXd> y(b.data(), static_cast<Eigen::Index>(b.size()));
  const Eigen::ArrayXd dx = x - x.mean(), dy = y - y.mean();
  const double den = std::sqrt(dx.square().sum() * dy.square().sum());
  if (!(den > 0.0)) throw NoSignalError("pearson: zero variance input");
  return (dx * dy).sum() / den;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(average_ranks(a), average_ranks(b));
}

Aggregate MetricReport::aggregate(double ImageMetrics::*field) const {
  std::vector<double> v;
  for (const ImageMetrics& m : images) v.push_back(m.*field);
  Aggregate agg;
  if (v.empty()) return agg;
  agg.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (std::isinf(agg.mean)) return agg;
  double sq = 0.0;
  for (double x : v) sq += (x - agg.mean) * (x - agg.mean);
  agg.stddev = std::sqrt(sq / static_cast<double>(v.size()));
  return agg;
}

Aggregate MetricReport::aggregate_ablation(const std::string& mode) const {
  std::vector<double> v;
  for (const ImageMetrics& m : images) {
    if (auto it = m.ablation_psnr.find(mode); it != m.ablation_psnr.end()) v.push_back(it->second);
  }
  Aggregate agg;
  if (v.empty()) return agg;
  agg.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - agg.mean) * (x - agg.mean);
  agg.stddev = std::sqrt(sq / static_cast<double>(v.size()));
  return agg;
}

std::string MetricReport::to_csv() const {
  std::set<std::string> modes;
  for (const ImageMetrics& m : images) {
    for (const auto& [mode, _] : m.ablation_psnr) modes.insert(mode);
  }
  std::ostringstream os;
  os << "image_id,psnr_db,ssim,l_rec,l_grad,l_cons,l_total";
  for (const std::string& mode : modes) os << ",psnr_" << mode;
  os << "\n";
  for (const ImageMetrics& m : images) {
    os << m.image_id << ',' << format_number(m.psnr_db) << ',' << format_number(m.ssim) << ','
       << format_number(m.l_rec) << ',' << format_number(m.l_grad) << ',' << format_number(m.l_cons) << ','
       << format_number(m.l_total);
    for (const std::string& mode : modes) {
      auto it = m.ablation_psnr.find(mode);
      os << ',' << (it == m.ablation_psnr.end() ? std::string() : format_number(it->second));
    }
    os << "\n";
  }
  if (!images.empty()) {
    using F = double ImageMetrics::*;
    const F fields[] = {&ImageMetrics::psnr_db, &ImageMetrics::ssim,   &ImageMetrics::l_rec,
                        &ImageMetrics::l_grad,  &ImageMetrics::l_cons, &ImageMetrics::l_total};
    for (const bool want_std : {false, true}) {
      os << (want_std ? "std" : "mean");
      for (F f : fields) {
        const Aggregate agg = aggregate(f);
        os << ',' << format_number(want_std ? agg.stddev : agg.mean);
      }
      for (const std::string& mode : modes) {
        const Aggregate agg = aggregate_ablation(mode);
        os << ',' << format_number(want_std ? agg.stddev : agg.mean);
      }
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace evraw::metrics
