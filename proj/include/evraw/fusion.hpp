// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <evraw/core.hpp>
#include <evraw/sensor.hpp>

namespace evraw::fusion {

/// SNR maps are clamped to this magnitude (dB).
inline constexpr double kSnrClampDb = 80.0;

/// Per-pixel reliability in dB.
struct SnrMap {
  Image values;
};

/// Per-pixel two-modality weights; image + event = 1 at every pixel.
struct WeightMap {
  Image image;
  Image event;
};

struct FusionConfig {
  int kernel_size = 5;       ///< k_s, odd; 1 disables smoothing
  double temperature = 1.0;  ///< tau

  void validate() const;
};

/// Channels x (H*W) feature stack. Row c holds channel c in row-major pixel order.
struct FeatureMap {
  int height = 0;
  int width = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> data;

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Map<Image> channel(int c) { return {data.row(c).data(), height, width}; }
  Eigen::Map<const Image> channel(int c) const { return {data.row(c).data(), height, width}; }
};

/// Channel layout of encode_features.
enum FeatureChannel : int {
  kIntensity = 0,
  kGradX = 1,
  kGradY = 2,
  kLaplacian = 3,
  kBand0 = 4,  ///< identity - G(1)
  kBand1 = 5,  ///< G(1) - G(2)
  kBand2 = 6,  ///< G(2) - G(4)
  kBand3 = 7,  ///< G(4) - G(8)
  kNumFeatureChannels = 8,
};

/// 10 log10(m_in^2 / ((m_in - m_den)^2 + eps)), clamped to +/- kSnrClampDb.
SnrMap snr_map(const Image& m_in, const Image& m_den, double epsilon);

/// Box-smooths both maps, then a per-pixel two-way softmax over (s / tau).
WeightMap fusion_weights(const SnrMap& snr_img, const SnrMap& snr_evt, const FusionConfig& cfg);

/// Constant weights (image, event) for the ablation fusion modes.
WeightMap constant_weights(int height, int width, double image_weight, double event_weight);

/// Fixed filter bank: intensity, d/dx, d/dy, Laplacian, four difference-of-Gaussian bands.
FeatureMap encode_features(const Image& image);
FeatureMap encode_features(const sim::RawFrame& raw);
/// Events are collapsed to their signed-count image first.
FeatureMap encode_features(const sim::VoxelGrid& voxels);

/// F_w(c, y, x) = F(c, y, x) * W(y, x).
FeatureMap apply_weights(const FeatureMap& features, const Image& weights);

}  // namespace evraw::fusion
