#pragma once

// File formats.
//
// Tensor files: the bytes "IDF1", a little-endian uint32 rank, rank
// little-endian uint32 dimensions, then the values as little-endian IEEE-754
// doubles in row-major order. A PSDR tensor is stored with dims (M, N, K), so
// the bin index varies fastest on disk.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "invdiff/detect.hpp"
#include "invdiff/grid.hpp"
#include "invdiff/kernels.hpp"

namespace invdiff::io {

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int b = 0; b < bytes; ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(b)])) << (8 * b);
  }
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_tensor(const RawTensor& t) {
  std::size_t count = 1;
  for (auto d : t.dims) count *= d;
  if (t.dims.empty() || count != t.values.size()) throw std::invalid_argument("encode_tensor: dims do not match values");
  std::string out = "IDF1";
  out.reserve(8 + 4 * t.dims.size() + 8 * count);
  detail::put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_u32(out, d);
  for (double v : t.values) detail::put_f64(out, v);
  return out;
}

inline RawTensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 4, "IDF1") != 0) throw std::runtime_error("tensor file: bad magic");
  const auto rank = static_cast<std::size_t>(detail::get_le(bytes, 4, 4));
  if (rank == 0 || rank > 16) throw std::runtime_error("tensor file: unsupported rank");
  if (bytes.size() < 8 + 4 * rank) throw std::runtime_error("tensor file: truncated header");
  RawTensor t;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    t.dims.push_back(static_cast<std::uint32_t>(detail::get_le(bytes, 8 + 4 * i, 4)));
    count *= t.dims.back();
  }
  const std::size_t offset = 8 + 4 * rank;
  if (bytes.size() != offset + 8 * count) throw std::runtime_error("tensor file: size does not match dims");
  t.values.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    t.values[i] = std::bit_cast<double>(detail::get_le(bytes, offset + 8 * i, 8));
  }
  return t;
}

inline void write_tensor(const std::filesystem::path& path, const RawTensor& t) {
  detail::write_file(path, encode_tensor(t));
}

inline RawTensor read_tensor(const std::filesystem::path& path) { return decode_tensor(detail::read_file(path)); }

inline RawTensor to_raw(const Image& img) {
  RawTensor t;
  t.dims = {static_cast<std::uint32_t>(img.rows()), static_cast<std::uint32_t>(img.cols())};
  t.values.assign(img.values().begin(), img.values().end());
  return t;
}

inline RawTensor to_raw(const PsdrTensor& a) {
  RawTensor t;
  t.dims = {static_cast<std::uint32_t>(a.rows()), static_cast<std::uint32_t>(a.cols()),
            static_cast<std::uint32_t>(a.bins())};
  t.values.resize(a.size());
  std::size_t i = 0;
  for (std::size_t m = 0; m < a.rows(); ++m) {
    for (std::size_t n = 0; n < a.cols(); ++n) {
      for (std::size_t k = 0; k < a.bins(); ++k) t.values[i++] = a(m, n, k);
    }
  }
  return t;
}

inline RawTensor to_raw(const Kernel& g) {
  RawTensor t;
  const auto w = static_cast<std::uint32_t>(g.width());
  t.dims = {w, w};
  t.values = g.values;
  return t;
}

inline Image to_image(const RawTensor& t) {
  if (t.dims.size() != 2) throw std::runtime_error("tensor file: expected a rank-2 image");
  Image img(t.dims[0], t.dims[1]);
  std::copy(t.values.begin(), t.values.end(), img.values().begin());
  return img;
}

inline PsdrTensor to_psdr(const RawTensor& t) {
  if (t.dims.size() != 3) throw std::runtime_error("tensor file: expected a rank-3 PSDR tensor");
  PsdrTensor a(t.dims[0], t.dims[1], t.dims[2]);
  std::size_t i = 0;
  for (std::size_t m = 0; m < a.rows(); ++m) {
    for (std::size_t n = 0; n < a.cols(); ++n) {
      for (std::size_t k = 0; k < a.bins(); ++k) a(m, n, k) = t.values[i++];
    }
  }
  return a;
}

inline void write_image(const std::filesystem::path& path, const Image& img) { write_tensor(path, to_raw(img)); }
inline Image read_image(const std::filesystem::path& path) { return to_image(read_tensor(path)); }
inline void write_psdr(const std::filesystem::path& path, const PsdrTensor& a) { write_tensor(path, to_raw(a)); }
inline PsdrTensor read_psdr(const std::filesystem::path& path) { return to_psdr(read_tensor(path)); }

/// 16-bit binary PGM (big-endian samples), linearly scaled so the image
/// maximum maps to 65535. The factor is written to `<path>.scale` as
/// "scale = s" with sample = round(value * s).
inline double write_pgm(const std::filesystem::path& path, const Image& img) {
  const double peak = img.max();
  const double scale = peak > 0.0 ? 65535.0 / peak : 1.0;
  std::string out = "P5\n" + std::to_string(img.cols()) + " " + std::to_string(img.rows()) + "\n65535\n";
  for (double v : img.values()) {
    const auto s = static_cast<std::uint16_t>(std::clamp(std::round(v * scale), 0.0, 65535.0));
    out.push_back(static_cast<char>(s >> 8));
    out.push_back(static_cast<char>(s & 0xffu));
  }
  detail::write_file(path, out);
  char buf[64];
  std::snprintf(buf, sizeof buf, "scale = %.17g\n", scale);
  detail::write_file(path.string() + ".scale", buf);
  return scale;
}

/// Samples of a 16-bit PGM written by write_pgm (no comment lines).
inline std::vector<std::uint16_t> read_pgm_samples(const std::filesystem::path& path, std::size_t& rows,
                                                   std::size_t& cols) {
  const std::string bytes = detail::read_file(path);
  std::istringstream header(bytes);
  std::string magic;
  std::size_t maxval = 0;
  header >> magic >> cols >> rows >> maxval;
  if (magic != "P5" || maxval != 65535) throw std::runtime_error("pgm: expected a 16-bit P5 file");
  const auto offset = static_cast<std::size_t>(header.tellg()) + 1;
  if (bytes.size() != offset + 2 * rows * cols) throw std::runtime_error("pgm: size does not match header");
  std::vector<std::uint16_t> samples(rows * cols);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i] = static_cast<std::uint16_t>((static_cast<unsigned char>(bytes[offset + 2 * i]) << 8) |
                                            static_cast<unsigned char>(bytes[offset + 2 * i + 1]));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Location lists: CSV with header "m,n" or "m,n,score".
// ---------------------------------------------------------------------------

inline std::vector<Location> read_locations(const std::filesystem::path& path) {
  std::istringstream in(detail::read_file(path));
  std::string line;
  std::vector<Location> out;
  bool header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("m,n", 0) == 0) continue;
    }
    Location loc;
    char* end = nullptr;
    loc.m = std::strtol(line.c_str(), &end, 10);
    if (*end != ',') throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected m,n");
    const char* p = end + 1;
    loc.n = std::strtol(p, &end, 10);
    if (end == p) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected m,n");
    if (*end == ',') {
      p = end + 1;
      loc.score = std::strtod(p, &end);
      if (end == p) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    out.push_back(loc);
  }
  return out;
}

inline void write_locations(const std::filesystem::path& path, const std::vector<Location>& locs) {
  DetectionResult r;
  r.locations = locs;
  std::ostringstream os;
  r.write_csv(os);
  detail::write_file(path, os.str());
}

}  // namespace invdiff::io
