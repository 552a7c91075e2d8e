// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/fusion.hpp>

#include <evraw/filters.hpp>

#include <array>
#include <cmath>

namespace evraw::fusion {

namespace {

// Numerically stable logistic 1 / (1 + exp(-z)).
double logistic(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

void FusionConfig::validate() const {
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw InputDomainError("FusionConfig: kernel_size must be odd and >= 1");
  }
  if (!(temperature > 0.0)) throw InputDomainError("FusionConfig: temperature must be > 0");
}

SnrMap snr_map(const Image& m_in, const Image& m_den, double epsilon) {
  require_same_shape(m_in, m_den, "snr_map");
  if (!(epsilon > 0.0)) throw InputDomainError("snr_map: epsilon must be > 0");
  const Image ratio = m_in.square() / ((m_in - m_den).square() + epsilon);
  // log10(0) = -inf is mapped onto the clamp by max().
  return {(10.0 * ratio.log10()).max(-kSnrClampDb).min(kSnrClampDb)};
}

WeightMap fusion_weights(const SnrMap& snr_img, const SnrMap& snr_evt, const FusionConfig& cfg) {
  cfg.validate();
  require_same_shape(snr_img.values, snr_evt.values, "fusion_weights");
  const Image s_img = box_filter(snr_img.values, cfg.kernel_size);
  const Image s_evt = box_filter(snr_evt.values, cfg.kernel_size);
  WeightMap w{Image(s_img.rows(), s_img.cols()), Image(s_img.rows(), s_img.cols())};
  for (Eigen::Index i = 0; i < s_img.size(); ++i) {
    const double z = (s_img.data()[i] - s_evt.data()[i]) / cfg.temperature;
    w.image.data()[i] = logistic(z);
    w.event.data()[i] = logistic(-z);
  }
  return w;
}

WeightMap constant_weights(int height, int width, double image_weight, double event_weight) {
  return {Image::Constant(height, width, image_weight), Image::Constant(height, width, event_weight)};
}

FeatureMap encode_features(const Image& image) {
  if (!image.allFinite()) throw InputDomainError("encode_features: non-finite input");
  FeatureMap f;
  f.height = static_cast<int>(image.rows());
  f.width = static_cast<int>(image.cols());
  f.data.resize(kNumFeatureChannels, image.size());
  f.channel(kIntensity) = image;
  f.channel(kGradX) = diff_x(image);
  f.channel(kGradY) = diff_y(image);
  f.channel(kLaplacian) = laplacian(image);
  constexpr std::array<double, 5> sigmas{0.0, 1.0, 2.0, 4.0, 8.0};
  Image prev = image;
  for (int b = 0; b < 4; ++b) {
    Image next = gaussian_blur(image, sigmas[b + 1]);
    f.channel(kBand0 + b) = prev - next;
    prev = std::move(next);
  }
  return f;
}

FeatureMap encode_features(const sim::RawFrame& raw) { return encode_features(raw.values); }

FeatureMap encode_features(const sim::VoxelGrid& voxels) {
  if (voxels.bins.empty()) throw InputDomainError("encode_features: empty voxel grid");
  return encode_features(voxels.collapsed());
}

FeatureMap apply_weights(const FeatureMap& features, const Image& weights) {
  if (weights.rows() != features.height || weights.cols() != features.width) {
    throw InputDomainError("apply_weights: weight map does not match feature dimensions");
  }
  FeatureMap out = features;
  const Eigen::Map<const Eigen::RowVectorXd> w(weights.data(), weights.size());
  out.data.array().rowwise() *= w.array();
  return out;
}

}  // namespace evraw::fusion
