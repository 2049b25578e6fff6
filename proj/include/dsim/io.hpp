// Copyright 2026 The dsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsim/curves.hpp"
#include "dsim/errors.hpp"
#include "dsim/types.hpp"

namespace dsim::io {

using json = nlohmann::json;

/// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

/// 64-bit FNV-1a, as 16 lowercase hex digits.
inline std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of a key-value map in key order ("key=value\n" lines).
inline std::string config_hash(const std::map<std::string, std::string>& kv) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
  return fnv1a_hex(text);
}

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Vector vector_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
  return v;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << text;
  if (!f) throw Error("write failed: " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

inline void write_json(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw Error("malformed JSON in " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// CSV

/// Columns t, x1..xn, euclid_len, riem_len, center_axis.
inline std::string curve_csv(const CurvePath& p) {
  std::string out = "t";
  const Index n = p.size() ? p.points.front().size() : 0;
  for (Index i = 1; i <= n; ++i) out += ",x" + std::to_string(i);
  out += ",euclid_len,riem_len,center_axis\n";
  for (std::size_t r = 0; r < p.size(); ++r) {
    out += format_double(p.params[r]);
    for (Index i = 0; i < n; ++i) out += "," + format_double(p.points[r][i]);
    out += "," + format_double(p.euclid_len[r]) + "," + format_double(p.riem_len[r]) + "," +
           std::to_string(r < p.center_axis.size() ? p.center_axis[r] : -1) + "\n";
  }
  return out;
}

/// Plain CSV with a header row; numbers use format_double.
inline std::string table_csv(const std::vector<std::string>& header,
                             const std::vector<std::vector<std::string>>& rows) {
  auto line = [](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) s += (i ? "," : "") + cells[i];
    return s + "\n";
  };
  std::string out = line(header);
  for (const auto& r : rows) out += line(r);
  return out;
}

// ---------------------------------------------------------------------------
// PGM image grids

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major, 0 black
};

/// Rows of square tiles; each point is a tile x tile patch with values in
/// [0, 1]. Tiles are separated by `gap` mid-grey pixels.
inline Image tile_grid(const std::vector<std::vector<Vector>>& rows, int tile, int gap = 1) {
  std::size_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  Image img;
  img.width = static_cast<int>(cols) * (tile + gap) + gap;
  img.height = static_cast<int>(rows.size()) * (tile + gap) + gap;
  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 128);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Vector& v = rows[r][c];
      if (v.size() != static_cast<Index>(tile) * tile) throw DimensionMismatch(tile * tile, v.size());
      const int y0 = gap + static_cast<int>(r) * (tile + gap);
      const int x0 = gap + static_cast<int>(c) * (tile + gap);
      for (int y = 0; y < tile; ++y)
        for (int x = 0; x < tile; ++x) {
          const double val = std::clamp(v[y * tile + x], 0.0, 1.0);
          img.pixels[static_cast<std::size_t>(y0 + y) * img.width + x0 + x] =
              static_cast<std::uint8_t>(std::lround(255.0 * val));
        }
    }
  return img;
}

/// Binary graymap (P5, maxval 255).
inline std::string pgm_bytes(const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline Image parse_pgm(const std::string& bytes) {
  std::istringstream s(bytes);
  std::string magic;
  int maxval = 0;
  Image img;
  s >> magic >> img.width >> img.height >> maxval;
  if (magic != "P5" || maxval != 255 || img.width < 0 || img.height < 0)
    throw Error("not an 8-bit P5 graymap");
  s.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  s.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (s.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw TruncatedFile("graymap pixel data is short");
  return img;
}

/// `count` points evenly spaced by index along a path (end points included).
inline std::vector<Vector> sample_path(const CurvePath& p, int count) {
  std::vector<Vector> out;
  if (p.size() == 0 || count < 1) return out;
  for (int i = 0; i < count; ++i) {
    const std::size_t k = count == 1 ? 0 : i * (p.size() - 1) / (count - 1);
    out.push_back(p.points[k]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset cache: <base>.f64 holds count x dim little-endian doubles,
// <base>.json the sidecar.

struct DatasetCache {
  PointMatrix points;
  json sidecar;
};

inline void write_dataset_cache(const std::string& base, const PointMatrix& pts,
                                std::uint64_t seed, const std::string& provenance,
                                json extra = json::object()) {
  std::string bytes(static_cast<std::size_t>(pts.size()) * 8, '\0');
  for (Index r = 0; r < pts.rows(); ++r)
    for (Index c = 0; c < pts.cols(); ++c) {
      std::uint64_t u = std::bit_cast<std::uint64_t>(pts(r, c));
      const std::size_t off = static_cast<std::size_t>(r * pts.cols() + c) * 8;
      for (int b = 0; b < 8; ++b) bytes[off + b] = static_cast<char>((u >> (8 * b)) & 0xff);
    }
  write_text(base + ".f64", bytes);
  json side = std::move(extra);
  side["count"] = pts.rows();
  side["dim"] = pts.cols();
  side["seed"] = seed;
  side["provenance"] = provenance;
  side["data_hash"] = fnv1a_hex(bytes);
  write_json(base + ".json", side);
}

inline DatasetCache read_dataset_cache(const std::string& base) {
  DatasetCache dc;
  dc.sidecar = read_json(base + ".json");
  const auto count = dc.sidecar.at("count").get<Index>();
  const auto dim = dc.sidecar.at("dim").get<Index>();
  const std::string bytes = read_text(base + ".f64");
  if (bytes.size() != static_cast<std::size_t>(count * dim) * 8)
    throw TruncatedFile("dataset cache holds " + std::to_string(bytes.size()) +
                        " bytes, sidecar expects " + std::to_string(count * dim * 8));
  dc.points.resize(count, dim);
  for (Index r = 0; r < count; ++r)
    for (Index c = 0; c < dim; ++c) {
      const std::size_t off = static_cast<std::size_t>(r * dim + c) * 8;
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b)
        u |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[off + b])) << (8 * b);
      dc.points(r, c) = std::bit_cast<double>(u);
    }
  return dc;
}

// ---------------------------------------------------------------------------
// Key-value config: one "key = value" per line, '#' starts a comment.

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream s(text);
  std::string line;
  int no = 0;
  auto trim = [](std::string t) {
    const auto a = t.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = t.find_last_not_of(" \t\r");
    return t.substr(a, b - a + 1);
  };
  while (std::getline(s, line)) {
    ++no;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidArgument("config line " + std::to_string(no) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

}  // namespace dsim::io
