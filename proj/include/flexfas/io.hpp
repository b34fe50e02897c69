#pragma once

// File-level helpers: atomic writes, a stable content hash, and 16-bit
// PGM/PPM images for the modality arrays.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

#include "flexfas/error.hpp"
#include "flexfas/tensor.hpp"

namespace flexfas {

namespace fs = std::filesystem;

/// Writes through a sibling temp file and renames over the target.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// 64-bit FNV-1a; stable across platforms and runs.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// PNM (binary P5 grayscale / P6 color, maxval 65535, big-endian samples)

inline constexpr double kPnmMax = 65535.0;

inline std::string encode_pnm(const Tensor& img) {
  if (img.rank() != 3 || (img.dim(0) != 1 && img.dim(0) != 3)) {
    throw Error(ErrorCode::kShapeMismatch, "pnm needs [1|3,H,W], got " + shape_to_string(img.shape()));
  }
  const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
  std::string out = (C == 1 ? "P5\n" : "P6\n") + std::to_string(W) + " " + std::to_string(H) + "\n65535\n";
  out.reserve(out.size() + 2 * C * H * W);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const double v = std::clamp(img.at(c, h, w), 0.0, 1.0);
        const auto q = static_cast<std::uint16_t>(std::lround(v * kPnmMax));
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xFF));
      }
  return out;
}

inline Tensor decode_pnm(std::string_view bytes, const std::string& origin) {
  std::size_t pos = 0;
  auto next_token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return std::string(bytes.substr(start, pos - start));
  };
  const std::string magic = next_token();
  if (magic != "P5" && magic != "P6") throw Error(ErrorCode::kParseError, origin + ": not a binary PGM/PPM");
  std::size_t W = 0, H = 0, maxval = 0;
  try {
    W = std::stoul(next_token());
    H = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::kParseError, origin + ": malformed PNM header");
  }
  if (maxval == 0 || maxval > 65535) throw Error(ErrorCode::kParseError, origin + ": bad maxval");
  ++pos;  // single whitespace before the raster
  const std::size_t C = magic == "P5" ? 1 : 3, bps = maxval > 255 ? 2 : 1;
  if (bytes.size() < pos + C * H * W * bps) throw Error(ErrorCode::kParseError, origin + ": truncated raster");
  Tensor img({C, H, W});
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w)
      for (std::size_t c = 0; c < C; ++c) {
        const unsigned v = bps == 2 ? (static_cast<unsigned>(p[0]) << 8) | p[1] : p[0];
        p += bps;
        img.at(c, h, w) = static_cast<double>(v) / static_cast<double>(maxval);
      }
  return img;
}

inline void write_pnm(const fs::path& path, const Tensor& img) { write_file_atomic(path, encode_pnm(img)); }

inline Tensor read_pnm(const fs::path& path) { return decode_pnm(read_file(path), path.string()); }

}  // namespace flexfas
