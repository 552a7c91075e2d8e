// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/attention.hpp>

#include <evraw/rng.hpp>

#include <random>

namespace evraw::attention {

TokenizedFeatures tokenize(const fusion::FeatureMap& features, int patch) {
  if (patch < 1) throw InputDomainError("tokenize: patch size must be >= 1");
  TokenizedFeatures tok;
  tok.patch = patch;
  tok.channels = features.channels();
  tok.height = features.height;
  tok.width = features.width;
  const int gr = tok.grid_rows(), gc = tok.grid_cols(), pp = patch * patch;
  tok.tokens = Matrix::Zero(static_cast<Eigen::Index>(gr) * gc, static_cast<Eigen::Index>(tok.channels) * pp);
  for (int c = 0; c < tok.channels; ++c) {
    const auto ch = features.channel(c);
    for (int y = 0; y < features.height; ++y) {
      for (int x = 0; x < features.width; ++x) {
        const int n = (y / patch) * gc + x / patch;
        const int j = c * pp + (y % patch) * patch + x % patch;
        tok.tokens(n, j) = ch(y, x);
      }
    }
  }
  return tok;
}

fusion::FeatureMap detokenize(const TokenizedFeatures& tok) {
  const int gc = tok.grid_cols(), pp = tok.patch * tok.patch;
  if (tok.tokens.rows() != static_cast<Eigen::Index>(tok.grid_rows()) * gc ||
      tok.tokens.cols() != static_cast<Eigen::Index>(tok.channels) * pp) {
    throw InputDomainError("detokenize: token matrix does not match recorded geometry");
  }
  fusion::FeatureMap f;
  f.height = tok.height;
  f.width = tok.width;
  f.data.resize(tok.channels, static_cast<Eigen::Index>(tok.height) * tok.width);
  for (int c = 0; c < tok.channels; ++c) {
    auto ch = f.channel(c);
    for (int y = 0; y < tok.height; ++y) {
      for (int x = 0; x < tok.width; ++x) {
        ch(y, x) = tok.tokens((y / tok.patch) * gc + x / tok.patch,
                              c * pp + (y % tok.patch) * tok.patch + x % tok.patch);
      }
    }
  }
  return f;
}

Matrix orthonormal_projection(int dim, std::uint64_t seed, std::uint64_t index) {
  if (dim < 1) throw InputDomainError("orthonormal_projection: dim must be >= 1");
  CounterRng rng(seed, stream_id(RngDomain::kProjection, index));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(dim, dim);
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    for (Eigen::Index i = 0; i < g.rows(); ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < dim; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q;
}

std::pair<Projections, Projections> make_projections(int dim, std::uint64_t seed) {
  Projections img_query{orthonormal_projection(dim, seed, 0), orthonormal_projection(dim, seed, 1),
                        orthonormal_projection(dim, seed, 2)};
  Projections evt_query{orthonormal_projection(dim, seed, 3), orthonormal_projection(dim, seed, 4),
                        orthonormal_projection(dim, seed, 5)};
  return {std::move(img_query), std::move(evt_query)};
}

CrossAttentionResult cross_attention(const fusion::FeatureMap& image_weighted,
                                     const fusion::FeatureMap& event_weighted,
                                     std::uint64_t projection_seed, int patch) {
  if (image_weighted.height != event_weighted.height || image_weighted.width != event_weighted.width ||
      image_weighted.channels() != event_weighted.channels()) {
    throw InputDomainError("cross_attention: image and event feature shapes differ");
  }
  CrossAttentionResult res;
  res.image_tokens = tokenize(image_weighted, patch);
  res.event_tokens = tokenize(event_weighted, patch);
  const Matrix& ti = res.image_tokens.tokens;
  const Matrix& te = res.event_tokens.tokens;
  const auto [img_q, evt_q] = make_projections(static_cast<int>(ti.cols()), projection_seed);

  res.event_to_image = res.image_tokens;
  res.event_to_image.tokens = attend(ti * img_q.query, te * img_q.key, te * img_q.value);
  res.image_to_event = res.event_tokens;
  res.image_to_event.tokens = attend(te * evt_q.query, ti * evt_q.key, ti * evt_q.value);
  return res;
}

fusion::FeatureMap fuse_concat(const TokenizedFeatures& a_event, const TokenizedFeatures& a_image) {
  if (a_event.tokens.rows() != a_image.tokens.rows() || a_event.patch != a_image.patch ||
      a_event.height != a_image.height || a_event.width != a_image.width) {
    throw InputDomainError("fuse_concat: token counts or geometry differ");
  }
  TokenizedFeatures joined = a_event;
  joined.channels = a_event.channels + a_image.channels;
  joined.tokens.resize(a_event.tokens.rows(), a_event.tokens.cols() + a_image.tokens.cols());
  joined.tokens << a_event.tokens, a_image.tokens;
  return detokenize(joined);
}

fusion::FeatureMap fuse_skip(const CrossAttentionResult& attended) {
  TokenizedFeatures streams = attended.image_tokens;
  streams.channels += attended.event_tokens.channels;
  streams.tokens.resize(streams.tokens.rows(), streams.tokens.cols() + attended.event_tokens.tokens.cols());
  streams.tokens << attended.image_tokens.tokens, attended.event_tokens.tokens;
  TokenizedFeatures cross = attended.event_to_image;
  cross.channels += attended.image_to_event.channels;
  cross.tokens.resize(cross.tokens.rows(), cross.tokens.cols() + attended.image_to_event.tokens.cols());
  cross.tokens << attended.event_to_image.tokens, attended.image_to_event.tokens;
  return fuse_concat(streams, cross);
}

}  // namespace evraw::attention
