#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include "ep2/descriptor.hpp"
#include "ep2/detection.hpp"
#include "ep2/error.hpp"
#include "ep2/harness.hpp"

// Binary matrix/raster formats (little-endian, float32 payloads) and the CSV
// formats used by the command-line tool.
//
//   EPD1 | rows u32 | cols u32 | rows*cols f32     descriptor matrices
//   EPF1 | height u32 | width u32 | H*W f32        real rasters
//   EPB1 | height u32 | width u32 | H*W u8 {0,1}   binary heatmaps
//
// Payloads are row-major. Files must be exactly header + payload bytes.

namespace ep2::io {

inline constexpr std::string_view kDescriptorMagic = "EPD1";
inline constexpr std::string_view kRasterMagic = "EPF1";
inline constexpr std::string_view kHeatmapMagic = "EPB1";
inline constexpr std::size_t kHeaderBytes = 12;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

inline void put_f32(std::string& out, double value) {
  put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
}

inline double get_f32(std::string_view in, std::size_t at) {
  return static_cast<double>(std::bit_cast<float>(get_u32(in, at)));
}

struct Header {
  std::uint32_t rows;
  std::uint32_t cols;
};

inline Header read_header(std::string_view bytes, std::string_view magic,
                          std::size_t bytes_per_cell) {
  if (bytes.size() < kHeaderBytes) {
    throw Error(ErrorCode::MalformedFile, "file shorter than its 12-byte header");
  }
  if (bytes.substr(0, 4) != magic) {
    throw Error(ErrorCode::MalformedFile,
                "bad magic, expected " + std::string(magic));
  }
  const Header h{get_u32(bytes, 4), get_u32(bytes, 8)};
  if (h.rows < 1 || h.cols < 1) {
    throw Error(ErrorCode::MalformedFile, "dimensions must be >= 1");
  }
  const std::uint64_t expected = kHeaderBytes + static_cast<std::uint64_t>(h.rows) * h.cols *
                                                    bytes_per_cell;
  if (bytes.size() != expected) {
    throw Error(ErrorCode::MalformedFile, "payload is " + std::to_string(bytes.size()) +
                                              " bytes, expected " + std::to_string(expected));
  }
  return h;
}

inline std::string header(std::string_view magic, Eigen::Index rows, Eigen::Index cols) {
  if (rows < 1 || cols < 1 || rows > 0xffffffffLL || cols > 0xffffffffLL) {
    throw Error(ErrorCode::BadDimension, "matrix shape not representable in the file format");
  }
  std::string out(magic);
  put_u32(out, static_cast<std::uint32_t>(rows));
  put_u32(out, static_cast<std::uint32_t>(cols));
  return out;
}

inline Matrix decode_f32_grid(std::string_view bytes, std::string_view magic) {
  const Header h = read_header(bytes, magic, 4);
  Matrix m(h.rows, h.cols);
  std::size_t at = kHeaderBytes;
  for (std::uint32_t r = 0; r < h.rows; ++r) {
    for (std::uint32_t c = 0; c < h.cols; ++c, at += 4) m(r, c) = get_f32(bytes, at);
  }
  if (!m.allFinite()) throw Error(ErrorCode::MalformedFile, "payload contains non-finite values");
  return m;
}

inline std::string encode_f32_grid(const Matrix& m, std::string_view magic) {
  std::string out = header(magic, m.rows(), m.cols());
  out.reserve(kHeaderBytes + 4 * static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f32(out, m(r, c));
  }
  return out;
}

}  // namespace detail

inline std::string encode_matrix(const Matrix& m) {
  return detail::encode_f32_grid(m, kDescriptorMagic);
}
inline Matrix decode_matrix(std::string_view bytes) {
  return detail::decode_f32_grid(bytes, kDescriptorMagic);
}

inline std::string encode_raster(const Raster& r) {
  return detail::encode_f32_grid(r.values(), kRasterMagic);
}
inline Raster decode_raster(std::string_view bytes) {
  return Raster(detail::decode_f32_grid(bytes, kRasterMagic));
}

inline std::string encode_heatmap(const BinaryHeatmap& h) {
  std::string out = detail::header(kHeatmapMagic, h.cells().rows(), h.cells().cols());
  for (Eigen::Index r = 0; r < h.cells().rows(); ++r) {
    for (Eigen::Index c = 0; c < h.cells().cols(); ++c) {
      out.push_back(static_cast<char>(h.cells()(r, c)));
    }
  }
  return out;
}

inline BinaryHeatmap decode_heatmap(std::string_view bytes) {
  const auto h = detail::read_header(bytes, kHeatmapMagic, 1);
  ByteGrid cells(h.rows, h.cols);
  std::size_t at = kHeaderBytes;
  for (std::uint32_t r = 0; r < h.rows; ++r) {
    for (std::uint32_t c = 0; c < h.cols; ++c, ++at) {
      const auto v = static_cast<std::uint8_t>(bytes[at]);
      if (v > 1) throw Error(ErrorCode::MalformedFile, "heatmap cell is not 0 or 1");
      cells(r, c) = v;
    }
  }
  return BinaryHeatmap(std::move(cells));
}

// ---------------------------------------------------------------------------
// Text helpers

/// Shortest decimal that round-trips; `fixed` forbids exponent notation.
inline std::string format_number(double v, bool fixed = false) {
  std::array<char, 512> buf{};
  const auto res = fixed ? std::to_chars(buf.data(), buf.data() + buf.size(), v,
                                         std::chars_format::fixed)
                         : std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (res.ec != std::errc{}) throw Error(ErrorCode::BadDimension, "number too long to format");
  return std::string(buf.data(), res.ptr);
}

inline double parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw Error(ErrorCode::MalformedFile, "not a finite number: '" + std::string(s) + "'");
  }
  return v;
}

inline constexpr std::string_view kKeypointHeader = "x,y,score";

inline std::string format_keypoints(const KeypointList& kps) {
  std::string out(kKeypointHeader);
  out.push_back('\n');
  for (const auto& p : kps) {
    out += format_number(p.x, true) + ',' + format_number(p.y, true) + ',' +
           format_number(p.score, true) + '\n';
  }
  return out;
}

inline KeypointList parse_keypoints(std::string_view text) {
  KeypointList out;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kKeypointHeader) {
        throw Error(ErrorCode::MalformedFile, "keypoint file must start with 'x,y,score'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::array<std::string_view, 3> fields;
    for (std::size_t f = 0; f < 3; ++f) {
      const std::size_t comma = line.find(',');
      if ((f < 2) == (comma == std::string_view::npos)) {
        throw Error(ErrorCode::MalformedFile,
                    "line " + std::to_string(line_no) + ": expected three fields");
      }
      fields[f] = line.substr(0, comma);
      line = comma == std::string_view::npos ? std::string_view{} : line.substr(comma + 1);
    }
    out.push_back({parse_number(fields[0]), parse_number(fields[1]), parse_number(fields[2])});
  }
  if (!header_seen) throw Error(ErrorCode::MalformedFile, "keypoint file is empty");
  return out;
}

inline constexpr std::string_view kReportHeader =
    "step,l_op,l_sim,total,gram_gap,mean_view_cosine";

inline std::string format_report(const TrainReport& report) {
  std::string out(kReportHeader);
  out.push_back('\n');
  for (const auto& r : report.records) {
    out += std::to_string(r.step) + ',' + format_number(r.l_op) + ',' + format_number(r.l_sim) +
           ',' + format_number(r.total) + ',' + format_number(r.gram_gap) + ',' +
           format_number(r.mean_view_cosine) + '\n';
  }
  return out;
}

inline std::string format_matches(const MatchList& matches) {
  std::string out = "i,j,similarity\n";
  for (const auto& m : matches) {
    out += std::to_string(m.a) + ',' + std::to_string(m.b) + ',' + format_number(m.similarity) +
           '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MalformedFile, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::MalformedFile, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::MalformedFile, "write to '" + path + "' failed");
}

inline Matrix read_matrix_file(const std::string& path) { return decode_matrix(read_file(path)); }
inline void write_matrix_file(const std::string& path, const Matrix& m) {
  write_file(path, encode_matrix(m));
}
inline Raster read_raster_file(const std::string& path) { return decode_raster(read_file(path)); }
inline void write_raster_file(const std::string& path, const Raster& r) {
  write_file(path, encode_raster(r));
}
inline BinaryHeatmap read_heatmap_file(const std::string& path) {
  return decode_heatmap(read_file(path));
}
inline void write_heatmap_file(const std::string& path, const BinaryHeatmap& h) {
  write_file(path, encode_heatmap(h));
}
inline KeypointList read_keypoint_file(const std::string& path) {
  return parse_keypoints(read_file(path));
}
inline void write_keypoint_file(const std::string& path, const KeypointList& kps) {
  write_file(path, format_keypoints(kps));
}

}  // namespace ep2::io
