// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace evraw {

/// Dense single-channel image, indexed (row = y, col = x).
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;

/// Timestamps are integer nanoseconds throughout.
using TimeNs = std::int64_t;

/// Per-pixel signed event count over a window.
using EventCountMap = Image;

/// Per-pixel background-activity rate (events / pixel / second).
using RateMap = Image;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside an operation's domain (negative radiance, bad shapes, ...).
class InputDomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  explicit FormatError(const std::string& what) : Error(what) {}

  std::uint64_t byte_offset() const { return byte_offset_; }

 private:
  std::uint64_t byte_offset_ = 0;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PipelineError : public Error {
 public:
  using Error::Error;
};

/// Noise predictor produced unusable output during sampling.
class PredictorError : public Error {
 public:
  PredictorError(const std::string& what, int step)
      : Error(what + " (sampling step " + std::to_string(step) + ")"), step_(step) {}

  int step() const { return step_; }

 private:
  int step_;
};

/// A fit was requested on data that carries no usable signal.
class NoSignalError : public Error {
 public:
  using Error::Error;
};

template <typename A, typename B>
void require_same_shape(const Eigen::DenseBase<A>& a, const Eigen::DenseBase<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InputDomainError(std::string(what) + ": shape mismatch (" +
                           std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                           " vs " + std::to_string(b.rows()) + "x" +
                           std::to_string(b.cols()) + ")");
  }
}

/// Half-sample symmetric reflection (... b a | a b c ... ) valid for any offset.
inline Eigen::Index mirror_index(Eigen::Index i, Eigen::Index n) {
  if (n == 1) return 0;
  const Eigen::Index period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Linear-interpolated percentile, q in [0, 100].
double percentile(const Image& img, double q);

/// Number of worker threads used by the parallel kernels (OpenMP when available).
void set_num_threads(int n);
int num_threads();

}  // namespace evraw
