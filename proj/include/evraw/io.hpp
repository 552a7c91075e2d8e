// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats.
//
//  * EVT1 event files: 24-byte little-endian header
//      magic "EVT1" | width u16 | height u16 | record_count u64 | contrast_threshold f64
//    followed by 16-byte records
//      t_ns u64 | x u16 | y u16 | p i8 | provenance u8 | reserved u16
//  * Event CSV: optional "# width=W height=H contrast_threshold=C" line, then
//    the header "t_ns,x,y,p" (optionally ",provenance") and one row per event.
//  * RAW frames: binary PGM (P5, maxval 65535, big-endian samples) holding
//    black-level-offset codes, plus a JSON sidecar next to it (same stem,
//    ".json") with gain, black_level, exposure_ns and timestamp_ns.
//  * Radiance sequences: a directory of 16-bit PGM frames with sequence.json
//    listing frame files, frame_times_ns and electrons_per_dn.
//  * Inspection maps: 16-bit PGM with an affine code -> value map in the sidecar.

#pragma once

#include <evraw/core.hpp>
#include <evraw/sensor.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace evraw::io {

namespace fs = std::filesystem;

inline constexpr std::size_t kEventHeaderBytes = 24;
inline constexpr std::size_t kEventRecordBytes = 16;

void write_events(const fs::path& path, const sim::EventStream& stream);
sim::EventStream read_events(const fs::path& path);

void write_events_csv(const fs::path& path, const sim::EventStream& stream, bool include_provenance = true);
sim::EventStream read_events_csv(const fs::path& path);

/// Encodes to / decodes from an in-memory EVT1 buffer.
std::string encode_events(const sim::EventStream& stream);
sim::EventStream decode_events(const std::string& bytes);

struct Pgm {
  Image values;  ///< raw sample codes
  int maxval = 65535;
};

Pgm read_pgm(const fs::path& path);
/// Samples are rounded and clamped to [0, maxval]; maxval 255 or 65535.
void write_pgm(const fs::path& path, const Image& codes, int maxval);

fs::path sidecar_path(const fs::path& pgm_path);
nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

void write_raw(const fs::path& path, const sim::RawFrame& frame);
/// Rejects anything but maxval 65535; requires the sidecar.
sim::RawFrame read_raw(const fs::path& path);

void write_radiance_dir(const fs::path& dir, const sim::RadianceSequence& seq, double electrons_per_dn);
sim::RadianceSequence read_radiance_dir(const fs::path& dir);

/// Affine 16-bit export of a real-valued map over [lo, hi].
void write_map(const fs::path& path, const Image& values, double lo, double hi, const std::string& quantity);
Image read_map(const fs::path& path);

/// clamp(linear * exposure_scale, 0, 1)^(1/2.2).
Image tone_map(const Image& linear, double exposure_scale);
/// tone_map quantized to 8-bit codes.
Image tone_map_8bit(const Image& linear, double exposure_scale);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace evraw::io
