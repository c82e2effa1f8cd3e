#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/core/text.hpp"

namespace tactile_cal::sim {

/// Rigid spherical tip pressed `depth_mm` into the gel at (cx, cy) (printer
/// frame). Centres outside the field of view are allowed; the cap is clipped.
inline HeightField indent_sphere(double cx_mm, double cy_mm, double depth_mm, double radius_mm,
                                 const SensorGeometry& g) {
  if (!(radius_mm > 0.0)) throw InvalidArgument("probe radius must be positive");
  if (!(depth_mm >= 0.0)) throw InvalidArgument("indentation depth must be non-negative");
  if (depth_mm > radius_mm) throw InvalidArgument("indentation depth exceeds the probe radius");
  HeightField h{Array2D<double>(g.rows, g.cols, 0.0), g.pitch_mm, Units::mm};
  if (depth_mm == 0.0) return h;
  const double r2max = radius_mm * radius_mm;
  for (std::size_t r = 0; r < g.rows; ++r) {
    const double dy = g.y_of_row(static_cast<double>(r)) - cy_mm;
    for (std::size_t c = 0; c < g.cols; ++c) {
      const double dx = g.x_of_col(static_cast<double>(c)) - cx_mm;
      const double d2 = dx * dx + dy * dy;
      if (d2 >= r2max) continue;
      // written as depth - (R - s) so the apex is exactly depth
      const double v = depth_mm - (radius_mm - std::sqrt(r2max - d2));
      if (v > 0.0) h.values(r, c) = v;
    }
  }
  return h;
}

/// Central differences in mm/mm; first-order one-sided differences on the
/// border rows and columns.
inline GradientMap gradients_of(const HeightField& h) {
  const std::size_t rows = h.rows(), cols = h.cols();
  if (rows < 3 || cols < 3) throw InvalidArgument("gradients need at least 3x3 samples");
  if (!(h.pitch_mm > 0.0)) throw InvalidArgument("pitch must be positive");
  GradientMap g(rows, cols);
  const double inv = 1.0 / h.pitch_mm;
  const double inv2 = 0.5 / h.pitch_mm;
  const auto& z = h.values;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c == 0) {
        g.gx(r, c) = (z(r, 1) - z(r, 0)) * inv;
      } else if (c == cols - 1) {
        g.gx(r, c) = (z(r, c) - z(r, c - 1)) * inv;
      } else {
        g.gx(r, c) = (z(r, c + 1) - z(r, c - 1)) * inv2;
      }
      if (r == 0) {
        g.gy(r, c) = (z(1, c) - z(0, c)) * inv;
      } else if (r == rows - 1) {
        g.gy(r, c) = (z(r, c) - z(r - 1, c)) * inv;
      } else {
        g.gy(r, c) = (z(r + 1, c) - z(r - 1, c)) * inv2;
      }
    }
  }
  return g;
}

using Vec3 = std::array<double, 3>;

/// Lambertian shading with one directional light per colour channel.
struct IlluminationModel {
  std::array<Vec3, 3> light_dirs{};       // unit vectors, (x, y, z) with z towards the camera
  std::array<Array2D<double>, 3> gain{};  // A_c(x, y) > 0
  TactileImage baseline;                  // ambient frame B
  double noise_sigma = 2.0;               // 8-bit counts

  bool operator==(const IlluminationModel&) const = default;

  [[nodiscard]] std::size_t rows() const noexcept { return baseline.rows; }
  [[nodiscard]] std::size_t cols() const noexcept { return baseline.cols; }

  void validate() const {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto& l = light_dirs[c];
      const double n = std::sqrt(l[0] * l[0] + l[1] * l[1] + l[2] * l[2]);
      if (std::abs(n - 1.0) > 1e-9) throw InvalidArgument("light directions must be unit vectors");
      if (gain[c].rows() != rows() || gain[c].cols() != cols()) {
        throw InvalidArgument("gain field does not match the baseline frame");
      }
      for (double a : gain[c].values()) {
        if (!(a > 0.0)) throw InvalidArgument("gain fields must be positive");
      }
    }
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  }
};

inline Vec3 light_direction(double azimuth_deg, double elevation_deg) {
  const double az = azimuth_deg * std::numbers::pi / 180.0;
  const double el = elevation_deg * std::numbers::pi / 180.0;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

/// Three lights at azimuths 0/120/240 deg, elevation 45 deg; gains fall off
/// radially as 1 - 0.4 (r / r_max)^2; faint per-channel baseline ramps.
inline IlluminationModel default_illumination(const SensorGeometry& g, double noise_sigma = 2.0) {
  IlluminationModel m;
  m.noise_sigma = noise_sigma;
  constexpr std::array<double, 3> azimuth = {0.0, 120.0, 240.0};
  constexpr std::array<double, 3> peak_gain = {0.55, 0.50, 0.60};
  constexpr std::array<double, 3> base_level = {28.0, 34.0, 40.0};
  constexpr std::array<double, 3> base_ramp = {6.0, -5.0, 4.0};
  const double cr = 0.5 * static_cast<double>(g.rows - 1);
  const double cc = 0.5 * static_cast<double>(g.cols - 1);
  const double rmax2 = cr * cr + cc * cc;
  m.baseline = TactileImage(g.rows, g.cols);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    m.light_dirs[ch] = light_direction(azimuth[ch], 45.0);
    m.gain[ch] = Array2D<double>(g.rows, g.cols);
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        const double dr = static_cast<double>(r) - cr;
        const double dc = static_cast<double>(c) - cc;
        // float-representable so the grid file round-trips exactly
        m.gain[ch](r, c) = static_cast<float>(peak_gain[ch] * (1.0 - 0.4 * (dr * dr + dc * dc) / std::max(rmax2, 1e-12)));
        const double u = cc > 0 ? dc / cc : 0.0;
        const double v = cr > 0 ? dr / cr : 0.0;
        const double b = base_level[ch] + base_ramp[ch] * (ch == 1 ? v : u);
        m.baseline.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(b));
      }
    }
  }
  return m;
}

// ------------------------------------------------------------ serialization
// Text part: light directions and noise; grid part: 6 channels per pixel,
// gains A_R, A_G, A_B then baseline B_R, B_G, B_B.

inline std::string illumination_config_text(const IlluminationModel& m) {
  text::KeyValues kv;
  kv["format"] = "illumination/1";
  kv["rows"] = std::to_string(m.rows());
  kv["cols"] = std::to_string(m.cols());
  kv["noise_sigma"] = text::format_double(m.noise_sigma);
  static constexpr const char* names[] = {"light_r", "light_g", "light_b"};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto& l = m.light_dirs[ch];
    kv[names[ch]] = text::format_double(l[0]) + "," + text::format_double(l[1]) + "," + text::format_double(l[2]);
  }
  return text::write_key_values(kv);
}

inline GridFile illumination_grid(const IlluminationModel& m) {
  GridFile g{static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), 6, Units::dimensionless, {}};
  g.data.resize(m.rows() * m.cols() * 6);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      float* px = &g.data[(r * m.cols() + c) * 6];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        px[ch] = static_cast<float>(m.gain[ch](r, c));
        px[3 + ch] = m.baseline.at(r, c, ch);
      }
    }
  }
  return g;
}

inline IlluminationModel illumination_from(std::string_view config_text, const GridFile& g) {
  const auto kv = text::parse_key_values(config_text);
  if (text::require_key(kv, "format") != "illumination/1") throw VersionError("unsupported illumination format");
  IlluminationModel m;
  m.noise_sigma = text::require_double(kv, "noise_sigma");
  const auto rows = text::require_u64(kv, "rows");
  const auto cols = text::require_u64(kv, "cols");
  if (g.rows != rows || g.cols != cols || g.channels != 6) throw FormatError("illumination grid shape mismatch");
  static constexpr const char* names[] = {"light_r", "light_g", "light_b"};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const auto parts = text::split(text::require_key(kv, names[ch]), ',');
    if (parts.size() != 3) throw FormatError(std::string("bad light direction ") + names[ch]);
    for (std::size_t k = 0; k < 3; ++k) {
      if (!text::parse_double(parts[k], m.light_dirs[ch][k])) throw FormatError("bad light direction component");
    }
    m.gain[ch] = Array2D<double>(rows, cols);
  }
  m.baseline = TactileImage(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const float* px = &g.data[(r * cols + c) * 6];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        m.gain[ch](r, c) = px[ch];
        const float b = px[3 + ch];
        if (!(b >= 0.0f && b <= 255.0f) || b != std::floor(b)) throw FormatError("baseline is not 8-bit");
        m.baseline.at(r, c, ch) = static_cast<std::uint8_t>(b);
      }
    }
  }
  m.validate();
  return m;
}

/// Writes `<stem>.cfg` and `<stem>.grid`.
inline void save_illumination(const std::filesystem::path& stem, const IlluminationModel& m) {
  auto cfg = stem;
  auto grid = stem;
  write_text_file(cfg.replace_extension(".cfg"), illumination_config_text(m));
  save_grid(grid.replace_extension(".grid"), illumination_grid(m));
}

inline IlluminationModel load_illumination(const std::filesystem::path& stem) {
  auto cfg = stem;
  auto grid = stem;
  return illumination_from(read_text_file(cfg.replace_extension(".cfg")), load_grid(grid.replace_extension(".grid")));
}

/// Provenance hash over both serialized parts.
inline std::uint64_t illumination_hash(const IlluminationModel& m) {
  const auto bytes = encode_grid(illumination_grid(m));
  return text::fnv1a(illumination_config_text(m)) ^
         mix_seed(text::fnv1a(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
}

/// I = clamp(B + A max(0, n.l) 255, 0, 255) + N(0, sigma), rounded and
/// clamped to 8 bits; n = (-gx, -gy, 1) / |.|. Deterministic in `seed`.
inline TactileImage render(const GradientMap& grad, const IlluminationModel& illum, std::uint64_t seed) {
  if (grad.rows() != illum.rows() || grad.cols() != illum.cols()) {
    throw InvalidArgument("gradient map does not match the illumination model");
  }
  TactileImage img(grad.rows(), grad.cols());
  Rng rng(seed);
  const bool noisy = illum.noise_sigma > 0.0;
  for (std::size_t r = 0; r < grad.rows(); ++r) {
    for (std::size_t c = 0; c < grad.cols(); ++c) {
      const double gx = grad.gx(r, c), gy = grad.gy(r, c);
      const double inv_norm = 1.0 / std::sqrt(gx * gx + gy * gy + 1.0);
      const double nx = -gx * inv_norm, ny = -gy * inv_norm, nz = inv_norm;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const auto& l = illum.light_dirs[ch];
        const double shade = std::max(0.0, nx * l[0] + ny * l[1] + nz * l[2]);
        double v = std::clamp(illum.baseline.at(r, c, ch) + illum.gain[ch](r, c) * shade * 255.0, 0.0, 255.0);
        if (noisy) v += illum.noise_sigma * rng.normal();
        img.at(r, c, ch) = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
      }
    }
  }
  return img;
}

/// Bilinear translation by (dx, dy) pixels; zero outside the source.
inline Array2D<double> translate(const Array2D<double>& src, double dx_px, double dy_px) {
  Array2D<double> out(src.rows(), src.cols(), 0.0);
  const auto rows = static_cast<long>(src.rows());
  const auto cols = static_cast<long>(src.cols());
  auto at = [&](long r, long c) { return (r < 0 || c < 0 || r >= rows || c >= cols) ? 0.0 : src(r, c); };
  for (long r = 0; r < rows; ++r) {
    const double sr = static_cast<double>(r) - dy_px;
    const double fr = std::floor(sr);
    const double wr = sr - fr;
    for (long c = 0; c < cols; ++c) {
      const double sc = static_cast<double>(c) - dx_px;
      const double fc = std::floor(sc);
      const double wc = sc - fc;
      const long r0 = static_cast<long>(fr), c0 = static_cast<long>(fc);
      double v = (1 - wr) * (1 - wc) * at(r0, c0);
      if (wc != 0.0) v += (1 - wr) * wc * at(r0, c0 + 1);
      if (wr != 0.0) v += wr * (1 - wc) * at(r0 + 1, c0);
      if (wr != 0.0 && wc != 0.0) v += wr * wc * at(r0 + 1, c0 + 1);
      out(r, c) = v;
    }
  }
  return out;
}

struct ObjectRender {
  TactileImage image;
  HeightField ground_truth;
};

/// Presses an object (its top-surface height field, already on the sensor
/// grid) into the gel: the profile is shifted by (dx, dy) mm and lowered so
/// exactly `indent_depth_mm` of it penetrates the gel plane.
inline ObjectRender render_object(const HeightField& object, double shift_x_mm, double shift_y_mm,
                                  double indent_depth_mm, const IlluminationModel& illum, std::uint64_t seed) {
  if (object.rows() != illum.rows() || object.cols() != illum.cols()) {
    throw InvalidArgument("object field is not sampled on the sensor grid");
  }
  const double apex = max_value(object.values);
  if (!(apex > 0.0)) throw InvalidArgument("object field is empty");
  if (!(indent_depth_mm >= 0.0) || indent_depth_mm > apex) {
    throw InvalidArgument("indent depth must lie in [0, object height]");
  }
  HeightField eff{translate(object.values, shift_x_mm / object.pitch_mm, shift_y_mm / object.pitch_mm),
                  object.pitch_mm, Units::mm};
  if (!(max_value(eff.values) > 0.0)) throw InvalidArgument("pose shift moves the object off the sensor");
  const double lower = apex - indent_depth_mm;
  for (auto& v : eff.values.values()) v = std::max(0.0, v - lower);
  return {render(gradients_of(eff), illum, seed), std::move(eff)};
}

}  // namespace tactile_cal::sim
