// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// Procedural low-light radiance sequences used by the benchmarks.

#pragma once

#include <evraw/core.hpp>
#include <evraw/sensor.hpp>

#include <cstdint>
#include <vector>

namespace evraw::sim {

using LabelMap = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum SceneRegion : int {
  kBrightTextured = 0,
  kDarkTextured = 1,
  kDarkSmooth = 2,
  kNumSceneRegions = 3,
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  int num_frames = 9;
  TimeNs duration_ns = 10'000'000;
  double dark_electrons = 6.0;     ///< base level of the dark bands
  double bright_electrons = 60.0;  ///< base level of the bright band
  double texture_contrast = 3.0;   ///< peak / trough ratio of the gratings
  double motion_px = 3.0;          ///< horizontal translation over the sequence
};

/// Three vertical bands (bright textured, dark textured, dark smooth) in a
/// seed-dependent order, translating horizontally over the sequence.
struct Scene {
  RadianceSequence radiance;
  LabelMap regions;  ///< region of each pixel in the final frame
};

Scene make_scene(const SceneSpec& spec, std::uint64_t seed);

/// Static gray card: `levels.size()` equal-width vertical patches of constant radiance.
Scene make_gray_card(int width, int height, const std::vector<double>& levels, TimeNs duration_ns);

}  // namespace evraw::sim
