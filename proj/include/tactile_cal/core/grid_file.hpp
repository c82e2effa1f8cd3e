#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"

namespace tactile_cal {

static_assert(std::endian::native == std::endian::little,
              "grid files are written with native little-endian stores");

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace bytes {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::array<std::uint8_t, sizeof(T)> raw{};
  std::memcpy(raw.data(), &v, sizeof(T));
  out.insert(out.end(), raw.begin(), raw.end());
}

/// Bounds-checked little-endian reader over a byte span.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  [[nodiscard]] std::size_t position() const noexcept { return pos_; }
  [[nodiscard]] std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("unexpected end of data");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace bytes

/// In-memory form of the shared grid file:
///   "3DCGRID1" | u32 rows | u32 cols | u32 channels | u8 units |
///   rows*cols*channels f32 (row-major, channels interleaved) | u32 CRC32
/// All integers little-endian; the CRC covers every preceding byte.
struct GridFile {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::uint32_t channels = 1;
  Units units = Units::mm;
  std::vector<float> data;

  bool operator==(const GridFile&) const = default;
};

inline constexpr std::array<char, 8> kGridMagic = {'3', 'D', 'C', 'G', 'R', 'I', 'D', '1'};
inline constexpr std::size_t kGridHeaderBytes = 8 + 4 * 3 + 1;

inline std::vector<std::uint8_t> encode_grid(const GridFile& g) {
  const std::size_t n = std::size_t{g.rows} * g.cols * g.channels;
  if (g.data.size() != n) throw InvalidArgument("grid data size does not match its shape");
  std::vector<std::uint8_t> out(kGridMagic.size());
  out.reserve(kGridHeaderBytes + 4 * n + 4);
  std::memcpy(out.data(), kGridMagic.data(), kGridMagic.size());
  bytes::put(out, g.rows);
  bytes::put(out, g.cols);
  bytes::put(out, g.channels);
  bytes::put(out, static_cast<std::uint8_t>(g.units));
  out.resize(kGridHeaderBytes + 4 * n);
  if (n) std::memcpy(out.data() + kGridHeaderBytes, g.data.data(), 4 * n);
  bytes::put(out, crc32_of(out));
  return out;
}

/// Decodes one grid record from the front of `data`; `consumed` receives its
/// length so records can be concatenated.
inline GridFile decode_grid(std::span<const std::uint8_t> data, std::size_t* consumed = nullptr) {
  if (data.size() < kGridHeaderBytes + 4) throw FormatError("grid file too short");
  if (std::memcmp(data.data(), kGridMagic.data(), kGridMagic.size()) != 0) {
    if (std::memcmp(data.data(), "3DCGRID", 7) == 0) {
      throw VersionError("unsupported grid format version '" +
                         std::string(1, static_cast<char>(data[7])) + "'");
    }
    throw FormatError("bad grid magic");
  }
  bytes::Reader rd(data.subspan(8));
  GridFile g;
  g.rows = rd.get<std::uint32_t>();
  g.cols = rd.get<std::uint32_t>();
  g.channels = rd.get<std::uint32_t>();
  const auto units = rd.get<std::uint8_t>();
  if (units > 2) throw FormatError("unknown units tag " + std::to_string(units));
  g.units = static_cast<Units>(units);
  const std::size_t n = std::size_t{g.rows} * g.cols * g.channels;
  if (n > (data.size() - kGridHeaderBytes) / 4) throw FormatError("grid payload truncated");
  const std::size_t total = kGridHeaderBytes + 4 * n + 4;
  if (data.size() < total) throw FormatError("grid payload truncated");
  std::uint32_t stored = 0;
  std::memcpy(&stored, data.data() + total - 4, 4);
  if (stored != crc32_of(data.first(total - 4))) throw ChecksumError("grid CRC32 mismatch");
  g.data.resize(n);
  std::memcpy(g.data.data(), data.data() + kGridHeaderBytes, 4 * n);
  if (consumed) *consumed = total;
  return g;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return buf;
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  return {b.begin(), b.end()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline void save_grid(const std::filesystem::path& path, const GridFile& g) {
  write_file_bytes(path, encode_grid(g));
}

inline GridFile load_grid(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  std::size_t used = 0;
  GridFile g = decode_grid(b, &used);
  if (used != b.size()) throw FormatError("trailing bytes after grid record in " + path.string());
  return g;
}

// Conversions between domain maps and grid records.

inline GridFile to_grid(const DepthMap& m) {
  GridFile g{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 1, m.units, {}};
  g.data.assign(m.values.values().begin(), m.values.values().end());
  return g;
}

inline DepthMap depth_from_grid(const GridFile& g, double pitch_mm) {
  if (g.channels != 1) throw FormatError("depth grid must have one channel");
  DepthMap m{Array2D<double>(g.rows, g.cols), pitch_mm, g.units};
  std::copy(g.data.begin(), g.data.end(), m.values.values().begin());
  return m;
}

inline GridFile to_grid(const GradientMap& gm) {
  GridFile g{static_cast<std::uint32_t>(gm.rows()), static_cast<std::uint32_t>(gm.cols()), 2,
             Units::dimensionless, {}};
  g.data.resize(gm.gx.size() * 2);
  for (std::size_t i = 0; i < gm.gx.size(); ++i) {
    g.data[2 * i] = static_cast<float>(gm.gx.values()[i]);
    g.data[2 * i + 1] = static_cast<float>(gm.gy.values()[i]);
  }
  return g;
}

inline GradientMap gradients_from_grid(const GridFile& g) {
  if (g.channels != 2) throw FormatError("gradient grid must have two channels");
  GradientMap gm(g.rows, g.cols);
  for (std::size_t i = 0; i < gm.gx.size(); ++i) {
    gm.gx.values()[i] = g.data[2 * i];
    gm.gy.values()[i] = g.data[2 * i + 1];
  }
  return gm;
}

}  // namespace tactile_cal
