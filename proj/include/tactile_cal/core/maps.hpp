#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tactile_cal/core/array2d.hpp"
#include "tactile_cal/core/error.hpp"

namespace tactile_cal {

enum class Units : std::uint8_t { mm = 0, um = 1, dimensionless = 2 };

/// Scalar field on the sensor pixel grid. Used both for simulated gel
/// indentation (HeightField) and for reconstructed / ground-truth depth.
struct DepthMap {
  Array2D<double> values;
  double pitch_mm = 1.0;
  Units units = Units::mm;

  [[nodiscard]] std::size_t rows() const noexcept { return values.rows(); }
  [[nodiscard]] std::size_t cols() const noexcept { return values.cols(); }

  bool operator==(const DepthMap&) const = default;
};

using HeightField = DepthMap;

/// Surface slopes dz/dx (along columns) and dz/dy (along rows), dimensionless.
struct GradientMap {
  Array2D<double> gx;
  Array2D<double> gy;

  GradientMap() = default;
  GradientMap(std::size_t rows, std::size_t cols) : gx(rows, cols), gy(rows, cols) {}

  [[nodiscard]] std::size_t rows() const noexcept { return gx.rows(); }
  [[nodiscard]] std::size_t cols() const noexcept { return gx.cols(); }

  bool operator==(const GradientMap&) const = default;
};

/// H x W x 3 8-bit frame, interleaved RGB, row-major.
struct TactileImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;

  TactileImage() = default;
  TactileImage(std::size_t r, std::size_t c) : rows(r), cols(c), pixels(r * c * 3, 0) {}

  std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) noexcept {
    return pixels[(r * cols + c) * 3 + ch];
  }
  [[nodiscard]] std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const noexcept {
    return pixels[(r * cols + c) * 3 + ch];
  }

  bool operator==(const TactileImage&) const = default;
};

/// Placement of the camera frame in the printer (probe-plan) frame.
/// Pixel (r, c) has its centre at
///   x = center_x + (c - (cols-1)/2) * pitch,  y = center_y + (r - (rows-1)/2) * pitch.
struct SensorGeometry {
  std::size_t rows = 160;
  std::size_t cols = 120;
  double pitch_mm = 0.1125;
  double center_x_mm = 8.0;
  double center_y_mm = 9.0;

  [[nodiscard]] double x_of_col(double c) const noexcept {
    return center_x_mm + (c - 0.5 * static_cast<double>(cols - 1)) * pitch_mm;
  }
  [[nodiscard]] double y_of_row(double r) const noexcept {
    return center_y_mm + (r - 0.5 * static_cast<double>(rows - 1)) * pitch_mm;
  }
  [[nodiscard]] double col_of_x(double x) const noexcept {
    return (x - center_x_mm) / pitch_mm + 0.5 * static_cast<double>(cols - 1);
  }
  [[nodiscard]] double row_of_y(double y) const noexcept {
    return (y - center_y_mm) / pitch_mm + 0.5 * static_cast<double>(rows - 1);
  }

  /// True if (x, y) lies on the imaged area (pixel footprints included).
  [[nodiscard]] bool in_fov(double x, double y) const noexcept {
    const double c = col_of_x(x);
    const double r = row_of_y(y);
    return c >= -0.5 && c <= static_cast<double>(cols) - 0.5 && r >= -0.5 &&
           r <= static_cast<double>(rows) - 0.5;
  }

  /// Same field of view sampled `factor` times more coarsely.
  [[nodiscard]] SensorGeometry downsampled(std::size_t factor) const {
    if (factor == 0 || rows % factor != 0 || cols % factor != 0) {
      throw InvalidArgument("downsample factor must divide the sensor resolution");
    }
    SensorGeometry g = *this;
    g.rows = rows / factor;
    g.cols = cols / factor;
    g.pitch_mm = pitch_mm * static_cast<double>(factor);
    return g;
  }

  bool operator==(const SensorGeometry&) const = default;
};

/// Simulated DIGIT-like sensor: 160 x 120 frame whose 18 mm height matches the
/// probed area; the 13.5 mm width is narrower than the 16 mm probe grid, so
/// edge probe locations fall outside the camera field of view.
inline SensorGeometry default_sensor() { return SensorGeometry{}; }

/// The 80 x 60 training resolution used for CPU-scale runs.
inline SensorGeometry desk_sensor() { return default_sensor().downsampled(2); }

inline void require_finite(const Array2D<double>& a, const char* what) {
  for (double v : a.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(what) + " contains non-finite values");
  }
}

}  // namespace tactile_cal
