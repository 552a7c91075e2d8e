// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Patch tokenization and single-head bidirectional cross attention between
// image and event feature maps.

#pragma once

#include <evraw/core.hpp>
#include <evraw/fusion.hpp>

#include <cmath>
#include <cstdint>

namespace evraw::attention {

using Matrix = Eigen::MatrixXd;

/// N x (channels * p^2) token matrix built from non-overlapping p x p patches.
///
/// Patches are ordered row-major over the (zero-padded) grid; within a token
/// the layout is channel-major, then patch row, then patch column.
struct TokenizedFeatures {
  Matrix tokens;
  int patch = 1;
  int channels = 0;
  int height = 0;  ///< original, unpadded
  int width = 0;

  int grid_rows() const { return (height + patch - 1) / patch; }
  int grid_cols() const { return (width + patch - 1) / patch; }
  int pad_bottom() const { return grid_rows() * patch - height; }
  int pad_right() const { return grid_cols() * patch - width; }
};

TokenizedFeatures tokenize(const fusion::FeatureMap& features, int patch);
fusion::FeatureMap detokenize(const TokenizedFeatures& tokens);

/// Seeded random orthonormal dim x dim matrix (QR of a Gaussian matrix, sign-fixed).
Matrix orthonormal_projection(int dim, std::uint64_t seed, std::uint64_t index);

/// Row-wise softmax with max subtraction.
template <typename Derived>
Matrix softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  Matrix out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// softmax(Q K^T / sqrt(d)) V with d = Q.cols().
template <typename DQ, typename DK, typename DV>
Matrix attend(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
              const Eigen::MatrixBase<DV>& v) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw InputDomainError("attend: incompatible Q/K/V shapes");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  return softmax_rows((q * k.transpose()) * scale) * v;
}

/// Fixed projections for one attention direction.
struct Projections {
  Matrix query;
  Matrix key;
  Matrix value;
};

struct CrossAttentionResult {
  TokenizedFeatures image_tokens;  ///< tokenized F_img_w
  TokenizedFeatures event_tokens;  ///< tokenized F_evt_w
  TokenizedFeatures event_to_image;  ///< A_E: image queries attend over event keys/values
  TokenizedFeatures image_to_event;  ///< A_I: event queries attend over image keys/values
};

/// Projections used by cross_attention for token dimension `dim`:
/// [0] image queries / event keys / event values, [1] event queries / image keys / image values.
std::pair<Projections, Projections> make_projections(int dim, std::uint64_t seed);

/// A_E = softmax(Q_I K_E^T / sqrt(d)) V_E and A_I = softmax(Q_E K_I^T / sqrt(d)) V_I.
CrossAttentionResult cross_attention(const fusion::FeatureMap& image_weighted,
                                     const fusion::FeatureMap& event_weighted,
                                     std::uint64_t projection_seed, int patch);

/// Channel concatenation [A_E, A_I] mapped back to the spatial grid.
fusion::FeatureMap fuse_concat(const TokenizedFeatures& a_event, const TokenizedFeatures& a_image);

/// Conditioning used by the reconstruction pipeline: the weighted streams
/// kept next to the attention outputs, [F_img_w, F_evt_w, A_E, A_I].
fusion::FeatureMap fuse_skip(const CrossAttentionResult& attended);

}  // namespace evraw::attention
