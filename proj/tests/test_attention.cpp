// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include "oracles.hpp"

#include <evraw/attention.hpp>

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace evraw;
using namespace evraw::attention;

namespace {

fusion::FeatureMap random_features(int channels, int h, int w, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  fusion::FeatureMap f;
  f.height = h;
  f.width = w;
  f.data.resize(channels, static_cast<Eigen::Index>(h) * w);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = n(gen);
  return f;
}

/// Token n of a patch grid: channel-major, then patch row, then patch column.
Matrix oracle_tokens(const fusion::FeatureMap& f, int p) {
  const int gr = (f.height + p - 1) / p, gc = (f.width + p - 1) / p;
  Matrix t = Matrix::Zero(gr * gc, f.channels() * p * p);
  for (int n = 0; n < gr * gc; ++n) {
    for (int c = 0; c < f.channels(); ++c) {
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
          const int y = (n / gc) * p + i, x = (n % gc) * p + j;
          if (y < f.height && x < f.width) t(n, c * p * p + i * p + j) = f.channel(c)(y, x);
        }
      }
    }
  }
  return t;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(gen);
  return m;
}

}  // namespace

TEST_SUITE("attention") {

TEST_CASE("tokenize") {
  const fusion::FeatureMap f = random_features(3, 5, 7, 1);
  const TokenizedFeatures t1 = tokenize(f, 1);
  CHECK(t1.tokens.rows() == 35);
  CHECK(t1.tokens.cols() == 3);
  CHECK(t1.tokens(8, 2) == f.channel(2)(1, 1));

  for (int p : {1, 2, 3, 4}) {
    const TokenizedFeatures t = tokenize(f, p);
    CHECK((t.tokens - oracle_tokens(f, p)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(t.grid_rows() * p - t.pad_bottom() == 5);
    const fusion::FeatureMap back = detokenize(t);
    CHECK(back.height == 5);
    CHECK(back.width == 7);
    CHECK((back.data.array() == f.data.array()).all());
  }

  fusion::FeatureMap four;
  four.height = four.width = 4;
  four.data.resize(1, 16);
  for (int i = 0; i < 16; ++i) four.data(0, i) = i;
  const TokenizedFeatures q = tokenize(four, 2);
  REQUIRE(q.tokens.rows() == 4);
  CHECK(q.tokens.row(0) == Eigen::RowVector4d(0, 1, 4, 5));
  CHECK(q.tokens.row(1) == Eigen::RowVector4d(2, 3, 6, 7));
  CHECK(q.tokens.row(2) == Eigen::RowVector4d(8, 9, 12, 13));
  CHECK(q.tokens.row(3) == Eigen::RowVector4d(10, 11, 14, 15));
  CHECK_THROWS_AS(tokenize(four, 0), InputDomainError);
}

TEST_CASE("orthonormal projections") {
  const Matrix p = orthonormal_projection(24, 5, 0);
  CHECK((p.transpose() * p - Matrix::Identity(24, 24)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK((p - orthonormal_projection(24, 5, 0)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p - orthonormal_projection(24, 5, 1)).cwiseAbs().maxCoeff() > 0.1);
  CHECK((p - orthonormal_projection(24, 6, 0)).cwiseAbs().maxCoeff() > 0.1);
}

TEST_CASE("attend: degenerate keys") {
  std::mt19937_64 gen(2);
  const Matrix q = random_matrix(5, 6, gen);
  const Matrix k1 = random_matrix(1, 6, gen);
  const Matrix v1 = random_matrix(1, 3, gen);
  const Matrix single = attend(q, k1, v1);
  for (int i = 0; i < 5; ++i) CHECK((single.row(i) - v1.row(0)).cwiseAbs().maxCoeff() <= 1e-15);

  const Matrix k_same = k1.replicate(4, 1);
  const Matrix v4 = random_matrix(4, 3, gen);
  const Matrix uniform = attend(q, k_same, v4);
  const Eigen::RowVectorXd mean = v4.colwise().mean();
  for (int i = 0; i < 5; ++i) CHECK((uniform.row(i) - mean).cwiseAbs().maxCoeff() <= 1e-12);

  CHECK_THROWS_AS(attend(q, random_matrix(4, 5, gen), v4), InputDomainError);
  CHECK_THROWS_AS(attend(q, k_same, random_matrix(3, 3, gen)), InputDomainError);
}

TEST_CASE("attend: dense oracle, row-stochastic, convex hull and permutation invariance") {
  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 200; ++trial) {
    const int nq = 1 + trial % 7, nk = 1 + (trial * 3) % 9, d = 2 + trial % 5, dv = 1 + trial % 4;
    const Matrix q = random_matrix(nq, d, gen, 2.0), k = random_matrix(nk, d, gen, 2.0);
    const Matrix v = random_matrix(nk, dv, gen);
    const Matrix out = attend(q, k, v);
    CHECK((out - oracle::dense_attention(q, k, v)).cwiseAbs().maxCoeff() <= 1e-6);

    const Matrix probs = softmax_rows(q * k.transpose() / std::sqrt(static_cast<double>(d)));
    CHECK((probs.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
    CHECK((probs.array() >= 0.0).all());
    for (int c = 0; c < dv; ++c) {
      CHECK(out.col(c).minCoeff() >= v.col(c).minCoeff() - 1e-12);
      CHECK(out.col(c).maxCoeff() <= v.col(c).maxCoeff() + 1e-12);
    }

    std::vector<int> perm(nk);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    Matrix kp(nk, d), vp(nk, dv);
    for (int i = 0; i < nk; ++i) {
      kp.row(i) = k.row(perm[i]);
      vp.row(i) = v.row(perm[i]);
    }
    CHECK((attend(q, kp, vp) - out).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("cross_attention matches the dense oracle") {
  const fusion::FeatureMap img = random_features(3, 4, 4, 10);
  const fusion::FeatureMap evt = random_features(3, 4, 4, 11);
  const CrossAttentionResult r = cross_attention(img, evt, 99, 2);
  const Matrix ti = oracle_tokens(img, 2), te = oracle_tokens(evt, 2);
  REQUIRE(ti.rows() == 4);
  const auto [pi, pe] = make_projections(static_cast<int>(ti.cols()), 99);
  const Matrix a_e = oracle::dense_attention(ti * pi.query, te * pi.key, te * pi.value);
  const Matrix a_i = oracle::dense_attention(te * pe.query, ti * pe.key, ti * pe.value);
  CHECK((r.event_to_image.tokens - a_e).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK((r.image_to_event.tokens - a_i).cwiseAbs().maxCoeff() <= 1e-6);

  const CrossAttentionResult again = cross_attention(img, evt, 99, 2);
  CHECK((again.event_to_image.tokens.array() == r.event_to_image.tokens.array()).all());
  CHECK_THROWS_AS(cross_attention(img, random_features(3, 4, 5, 1), 99, 2), InputDomainError);
}

TEST_CASE("fuse_concat and fuse_skip") {
  const fusion::FeatureMap img = random_features(2, 6, 5, 20);
  const fusion::FeatureMap evt = random_features(2, 6, 5, 21);
  const CrossAttentionResult r = cross_attention(img, evt, 4, 2);
  const fusion::FeatureMap cat = fuse_concat(r.event_to_image, r.image_to_event);
  CHECK(cat.channels() == 4);
  CHECK(cat.height == 6);
  CHECK(cat.width == 5);
  const fusion::FeatureMap a_e = detokenize(r.event_to_image), a_i = detokenize(r.image_to_event);
  CHECK((cat.data.topRows(2).array() == a_e.data.array()).all());
  CHECK((cat.data.bottomRows(2).array() == a_i.data.array()).all());

  TokenizedFeatures zero = r.event_to_image;
  zero.tokens.setZero();
  CHECK((fuse_concat(zero, zero).data.array() == 0.0).all());

  const fusion::FeatureMap skip = fuse_skip(r);
  CHECK(skip.channels() == 8);
  CHECK((skip.data.topRows(2).array() == img.data.array()).all());
  CHECK((skip.data.middleRows(2, 2).array() == evt.data.array()).all());
  CHECK((skip.data.bottomRows(4).array() == cat.data.array()).all());

  TokenizedFeatures short_tokens = r.image_to_event;
  short_tokens.tokens.conservativeResize(short_tokens.tokens.rows() - 1, Eigen::NoChange);
  CHECK_THROWS_AS(fuse_concat(r.event_to_image, short_tokens), InputDomainError);
}

}  // TEST_SUITE
