// Copyright (C) 2026 The evraw Authors
// SPDX-License-Identifier: Apache-2.0

#include <evraw/io.hpp>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evraw::io {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xFF));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(const std::string& in, std::size_t offset) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(in[offset + i])) << (8 * i));
  }
  return static_cast<T>(u);
}

std::string read_binary(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for reading");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_binary(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write to '" + path.string() + "' failed");
}

/// Reads the next whitespace-delimited PNM header token, skipping comments.
std::string pnm_token(const std::string& data, std::size_t& pos) {
  while (pos < data.size()) {
    if (data[pos] == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])) && data[pos] != '#') ++pos;
  if (start == pos) throw FormatError("PGM: truncated header", start);
  return data.substr(start, pos - start);
}

int pnm_int(const std::string& data, std::size_t& pos) {
  const std::size_t at = pos;
  const std::string tok = pnm_token(data, pos);
  if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
      tok.size() > 9) {
    throw FormatError("PGM: malformed header field '" + tok + "'", at);
  }
  return std::stoi(tok);
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string encode_events(const sim::EventStream& stream) {
  if (stream.width <= 0 || stream.height <= 0 || stream.width > 65535 || stream.height > 65535) {
    throw FormatError("EVT1: dimensions must lie in [1, 65535]");
  }
  std::string out;
  out.reserve(kEventHeaderBytes + kEventRecordBytes * stream.size());
  out.append("EVT1");
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.width));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.height));
  put_le<std::uint64_t>(out, stream.size());
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(stream.contrast_threshold));
  for (const sim::Event& e : stream.events) {
    if (e.t < 0) throw FormatError("EVT1: negative timestamps are not representable");
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.t));
    put_le<std::uint16_t>(out, e.x);
    put_le<std::uint16_t>(out, e.y);
    put_le<std::int8_t>(out, e.p);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(e.provenance));
    put_le<std::uint16_t>(out, 0);
  }
  return out;
}

sim::EventStream decode_events(const std::string& bytes) {
  if (bytes.size() < kEventHeaderBytes) throw FormatError("EVT1: truncated header", bytes.size());
  if (bytes.compare(0, 4, "EVT1") != 0) throw FormatError("EVT1: bad magic", 0);
  sim::EventStream s;
  s.width = get_le<std::uint16_t>(bytes, 4);
  s.height = get_le<std::uint16_t>(bytes, 6);
  const auto count = get_le<std::uint64_t>(bytes, 8);
  s.contrast_threshold = std::bit_cast<double>(get_le<std::uint64_t>(bytes, 16));
  if (s.width == 0 || s.height == 0) throw FormatError("EVT1: zero dimension", 4);
  if (!(s.contrast_threshold > 0.0) || !std::isfinite(s.contrast_threshold)) {
    throw FormatError("EVT1: contrast threshold must be finite and > 0", 16);
  }
  const std::size_t payload = bytes.size() - kEventHeaderBytes;
  if (count > payload / kEventRecordBytes) {
    throw FormatError("EVT1: truncated payload, header declares " + std::to_string(count) + " records",
                      kEventHeaderBytes + (payload / kEventRecordBytes) * kEventRecordBytes);
  }
  if (payload != count * kEventRecordBytes) {
    throw FormatError("EVT1: trailing bytes after the declared records",
                      kEventHeaderBytes + count * kEventRecordBytes);
  }
  s.events.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t off = kEventHeaderBytes + i * kEventRecordBytes;
    sim::Event& e = s.events[i];
    const auto t = get_le<std::uint64_t>(bytes, off);
    if (t > static_cast<std::uint64_t>(std::numeric_limits<TimeNs>::max())) {
      throw FormatError("EVT1: timestamp overflow", off);
    }
    e.t = static_cast<TimeNs>(t);
    e.x = get_le<std::uint16_t>(bytes, off + 8);
    e.y = get_le<std::uint16_t>(bytes, off + 10);
    e.p = get_le<std::int8_t>(bytes, off + 12);
    const auto prov = get_le<std::uint8_t>(bytes, off + 13);
    if (e.x >= s.width || e.y >= s.height) throw FormatError("EVT1: coordinate out of bounds", off + 8);
    if (e.p != 1 && e.p != -1) throw FormatError("EVT1: polarity must be +1 or -1", off + 12);
    if (prov > 2) throw FormatError("EVT1: unknown provenance tag", off + 13);
    e.provenance = static_cast<sim::Provenance>(prov);
  }
  return s;
}

void write_events(const fs::path& path, const sim::EventStream& stream) {
  write_binary(path, encode_events(stream));
}

sim::EventStream read_events(const fs::path& path) { return decode_events(read_binary(path)); }

void write_events_csv(const fs::path& path, const sim::EventStream& stream, bool include_provenance) {
  std::ostringstream os;
  os << "# width=" << stream.width << " height=" << stream.height
     << " contrast_threshold=" << format_double(stream.contrast_threshold) << "\n";
  os << (include_provenance ? "t_ns,x,y,p,provenance\n" : "t_ns,x,y,p\n");
  for (const sim::Event& e : stream.events) {
    os << e.t << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.p);
    if (include_provenance) os << ',' << static_cast<int>(e.provenance);
    os << "\n";
  }
  write_text(path, os.str());
}

sim::EventStream read_events_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  sim::EventStream s;
  s.width = -1;
  s.height = -1;
  std::string line;
  std::size_t offset = 0;
  bool header_seen = false, with_prov = false;
  int max_x = -1, max_y = -1;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string kv;
      while (meta >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        try {
          if (key == "width") s.width = std::stoi(val);
          if (key == "height") s.height = std::stoi(val);
          if (key == "contrast_threshold") s.contrast_threshold = std::stod(val);
        } catch (const std::exception&) {
          throw FormatError("event CSV: bad metadata '" + kv + "'", line_offset);
        }
      }
      continue;
    }
    if (!header_seen) {
      if (line == "t_ns,x,y,p") {
        with_prov = false;
      } else if (line == "t_ns,x,y,p,provenance") {
        with_prov = true;
      } else {
        throw FormatError("event CSV: expected header 't_ns,x,y,p'", line_offset);
      }
      header_seen = true;
      continue;
    }
    std::istringstream row(line);
    std::string field;
    std::vector<long long> v;
    try {
      while (std::getline(row, field, ',')) v.push_back(std::stoll(field));
    } catch (const std::exception&) {
      throw FormatError("event CSV: non-numeric field", line_offset);
    }
    if (v.size() != (with_prov ? 5u : 4u)) throw FormatError("event CSV: wrong field count", line_offset);
    if (v[0] < 0 || v[1] < 0 || v[2] < 0 || v[1] > 65535 || v[2] > 65535) {
      throw FormatError("event CSV: field out of range", line_offset);
    }
    if (v[3] != 1 && v[3] != -1) throw FormatError("event CSV: polarity must be +1 or -1", line_offset);
    if (with_prov && (v[4] < 0 || v[4] > 2)) throw FormatError("event CSV: unknown provenance", line_offset);
    sim::Event e{v[0], static_cast<std::uint16_t>(v[1]), static_cast<std::uint16_t>(v[2]),
                 static_cast<std::int8_t>(v[3]),
                 with_prov ? static_cast<sim::Provenance>(v[4]) : sim::Provenance::kUnknown};
    max_x = std::max(max_x, static_cast<int>(e.x));
    max_y = std::max(max_y, static_cast<int>(e.y));
    s.events.push_back(e);
  }
  if (!header_seen) throw FormatError("event CSV: missing header", offset);
  if (s.width < 0) s.width = std::max(max_x + 1, 1);
  if (s.height < 0) s.height = std::max(max_y + 1, 1);
  if (max_x >= s.width || max_y >= s.height) throw FormatError("event CSV: coordinate out of bounds");
  s.sort();
  return s;
}

Pgm read_pgm(const fs::path& path) {
  const std::string data = read_binary(path);
  if (data.size() < 2 || data.compare(0, 2, "P5") != 0) throw FormatError("PGM: expected P5 magic", 0);
  std::size_t pos = 2;
  const int w = pnm_int(data, pos), h = pnm_int(data, pos), maxval = pnm_int(data, pos);
  if (w <= 0 || h <= 0) throw FormatError("PGM: non-positive dimensions", 2);
  if (maxval <= 0 || maxval > 65535) throw FormatError("PGM: maxval out of range", pos);
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw FormatError("PGM: missing separator after maxval", pos);
  }
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * bps;
  if (data.size() - pos < need) throw FormatError("PGM: truncated pixel data", data.size());
  Pgm out;
  out.maxval = maxval;
  out.values.resize(h, w);
  for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos + i * bps);
    const unsigned v = bps == 2 ? (static_cast<unsigned>(p[0]) << 8) | p[1] : p[0];
    if (static_cast<int>(v) > maxval) throw FormatError("PGM: sample exceeds maxval", pos + i * bps);
    out.values.data()[i] = v;
  }
  return out;
}

void write_pgm(const fs::path& path, const Image& codes, int maxval) {
  if (maxval != 255 && maxval != 65535) throw FormatError("PGM: only maxval 255 or 65535 is written");
  if (!codes.allFinite()) throw FormatError("PGM: non-finite sample");
  std::string out = "P5\n" + std::to_string(codes.cols()) + " " + std::to_string(codes.rows()) + "\n" +
                    std::to_string(maxval) + "\n";
  for (Eigen::Index i = 0; i < codes.size(); ++i) {
    const auto v = static_cast<unsigned>(std::clamp(std::round(codes.data()[i]), 0.0, static_cast<double>(maxval)));
    if (maxval > 255) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  write_binary(path, out);
}

fs::path sidecar_path(const fs::path& pgm_path) {
  fs::path p = pgm_path;
  return p.replace_extension(".json");
}

nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("JSON: " + std::string(e.what()), e.byte);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_raw(const fs::path& path, const sim::RawFrame& frame) {
  write_pgm(path, frame.values + frame.black_level, 65535);
  write_json(sidecar_path(path), {{"gain", frame.gain},
                                  {"black_level", frame.black_level},
                                  {"exposure_ns", frame.exposure_ns},
                                  {"timestamp_ns", frame.timestamp}});
}

sim::RawFrame read_raw(const fs::path& path) {
  Pgm pgm = read_pgm(path);
  if (pgm.maxval != 65535) {
    throw FormatError("RAW: unsupported maxval " + std::to_string(pgm.maxval) + " (expected 65535)");
  }
  const fs::path side = sidecar_path(path);
  if (!fs::exists(side)) throw FormatError("RAW: missing sidecar '" + side.string() + "'");
  const nlohmann::json j = read_json(side);
  sim::RawFrame f;
  try {
    f.gain = j.at("gain").get<double>();
    f.black_level = j.at("black_level").get<double>();
    f.exposure_ns = j.value("exposure_ns", TimeNs{0});
    f.timestamp = j.value("timestamp_ns", TimeNs{0});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("RAW sidecar: " + std::string(e.what()));
  }
  if (!(f.gain > 0.0)) throw FormatError("RAW sidecar: gain must be > 0");
  f.values = pgm.values - f.black_level;
  return f;
}

void write_radiance_dir(const fs::path& dir, const sim::RadianceSequence& seq, double electrons_per_dn) {
  if (!(electrons_per_dn > 0.0)) throw InputDomainError("write_radiance_dir: scale must be > 0");
  fs::create_directories(dir);
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.pgm", i);
    write_pgm(dir / name, seq.frame(i) / electrons_per_dn, 65535);
    frames.push_back(name);
  }
  write_json(dir / "sequence.json",
             {{"frames", frames}, {"frame_times_ns", seq.frame_times()}, {"electrons_per_dn", electrons_per_dn}});
}

sim::RadianceSequence read_radiance_dir(const fs::path& dir) {
  const nlohmann::json j = read_json(dir / "sequence.json");
  std::vector<TimeNs> times;
  std::vector<Image> frames;
  double scale = 1.0;
  std::vector<std::string> names;
  try {
    times = j.at("frame_times_ns").get<std::vector<TimeNs>>();
    scale = j.at("electrons_per_dn").get<double>();
    names = j.at("frames").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("sequence.json: " + std::string(e.what()));
  }
  if (!(scale > 0.0)) throw FormatError("sequence.json: electrons_per_dn must be > 0");
  for (const std::string& name : names) frames.push_back(read_pgm(dir / name).values * scale);
  try {
    return sim::RadianceSequence(std::move(times), std::move(frames));
  } catch (const InputDomainError& e) {
    throw FormatError(std::string("radiance directory: ") + e.what());
  }
}

void write_map(const fs::path& path, const Image& values, double lo, double hi, const std::string& quantity) {
  if (!(hi > lo)) throw InputDomainError("write_map: need hi > lo");
  const double scale = (hi - lo) / 65535.0;
  write_pgm(path, ((values.max(lo).min(hi)) - lo) / scale, 65535);
  write_json(sidecar_path(path), {{"quantity", quantity}, {"offset", lo}, {"scale", scale}});
}

Image read_map(const fs::path& path) {
  const Pgm pgm = read_pgm(path);
  const nlohmann::json j = read_json(sidecar_path(path));
  return j.at("offset").get<double>() + pgm.values * j.at("scale").get<double>();
}

Image tone_map(const Image& linear, double exposure_scale) {
  if (!(exposure_scale > 0.0)) throw InputDomainError("tone_map: exposure scale must be > 0");
  return (linear * exposure_scale).max(0.0).min(1.0).pow(1.0 / 2.2);
}

Image tone_map_8bit(const Image& linear, double exposure_scale) {
  return (tone_map(linear, exposure_scale) * 255.0).round();
}

void write_text(const fs::path& path, const std::string& text) { write_binary(path, text); }

std::string read_text(const fs::path& path) { return read_binary(path); }

}  // namespace evraw::io
