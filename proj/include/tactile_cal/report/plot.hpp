#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tactile_cal/core/array2d.hpp"
#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/report/font.hpp"

namespace tactile_cal::report {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrid{225, 225, 225};
inline constexpr Rgb kMissing{170, 170, 170};

/// Ten distinguishable series colours.
inline Rgb palette(std::size_t i) {
  static constexpr std::array<Rgb, 10> p{{{31, 119, 180},
                                          {255, 127, 14},
                                          {44, 160, 44},
                                          {214, 39, 40},
                                          {148, 103, 189},
                                          {140, 86, 75},
                                          {227, 119, 194},
                                          {127, 127, 127},
                                          {188, 189, 34},
                                          {23, 190, 207}}};
  return p[i % p.size()];
}

/// Viridis-like ramp, t in [0, 1].
inline Rgb colormap(double t) {
  static constexpr std::array<std::array<double, 3>, 6> stops{{{68, 1, 84},
                                                               {65, 68, 135},
                                                               {42, 120, 142},
                                                               {34, 168, 132},
                                                               {122, 209, 81},
                                                               {253, 231, 37}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0) * static_cast<double>(stops.size() - 1);
  const auto i = std::min(static_cast<std::size_t>(t), stops.size() - 2);
  const double f = t - static_cast<double>(i);
  auto mix = [&](int k) {
    return static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  };
  return {mix(0), mix(1), mix(2)};
}

/// RGB raster with clipped drawing primitives.
class Canvas {
 public:
  Canvas(std::size_t width, std::size_t height, Rgb background = kWhite) : img_(height, width) {
    for (std::size_t i = 0; i < width * height; ++i) {
      img_.pixels[3 * i] = background.r;
      img_.pixels[3 * i + 1] = background.g;
      img_.pixels[3 * i + 2] = background.b;
    }
  }

  [[nodiscard]] int width() const noexcept { return static_cast<int>(img_.cols); }
  [[nodiscard]] int height() const noexcept { return static_cast<int>(img_.rows); }
  [[nodiscard]] const TactileImage& image() const noexcept { return img_; }
  TactileImage take() { return std::move(img_); }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width() || y >= height()) return;
    const auto i = (static_cast<std::size_t>(y) * img_.cols + static_cast<std::size_t>(x)) * 3;
    img_.pixels[i] = c.r;
    img_.pixels[i + 1] = c.g;
    img_.pixels[i + 2] = c.b;
  }

  [[nodiscard]] Rgb get(int x, int y) const {
    const auto i = (static_cast<std::size_t>(y) * img_.cols + static_cast<std::size_t>(x)) * 3;
    return {img_.pixels[i], img_.pixels[i + 1], img_.pixels[i + 2]};
  }

  void fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = std::max(0, y0); y <= std::min(height() - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(width() - 1, x1); ++x) set(x, y, c);
    }
  }

  void rect(int x0, int y0, int x1, int y1, Rgb c) {
    line(x0, y0, x1, y0, c);
    line(x1, y0, x1, y1, c);
    line(x1, y1, x0, y1, c);
    line(x0, y1, x0, y0, c);
  }

  /// Bresenham; `dash` > 0 draws dash-long segments separated by gaps.
  void line(int x0, int y0, int x1, int y1, Rgb c, int thickness = 1, int dash = 0) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, step = 0;
    const int h = thickness / 2;
    for (;;) {
      if (dash == 0 || (step / dash) % 2 == 0) fill_rect(x0 - h, y0 - h, x0 - h + thickness - 1, y0 - h + thickness - 1, c);
      ++step;
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  static int text_width(const std::string& s, int scale = 1) {
    return s.empty() ? 0 : static_cast<int>(s.size()) * (kGlyphW + 1) * scale - scale;
  }

  void text(int x, int y, const std::string& s, Rgb c = kBlack, int scale = 1) {
    for (char ch : s) {
      const auto& g = glyph(ch);
      for (int r = 0; r < kGlyphH; ++r) {
        for (int k = 0; k < kGlyphW; ++k) {
          if (g.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] != ' ') {
            fill_rect(x + k * scale, y + r * scale, x + k * scale + scale - 1, y + r * scale + scale - 1, c);
          }
        }
      }
      x += (kGlyphW + 1) * scale;
    }
  }

  void text_centered(int cx, int y, const std::string& s, Rgb c = kBlack, int scale = 1) {
    text(cx - text_width(s, scale) / 2, y, s, c, scale);
  }

 private:
  TactileImage img_;
};

/// Compact tick label: fixed notation for moderate magnitudes, otherwise
/// mantissa-exponent ("2.5e-4").
inline std::string tick_label(double v) {
  if (v == 0.0) return "0";
  const double a = std::abs(v);
  char buf[32];
  if (a >= 1e-2 && a < 1e5) {
    std::snprintf(buf, sizeof buf, "%.4g", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.2g", v);
    std::string s(buf);
    // "2.5e-04" -> "2.5e-4"
    if (const auto e = s.find('e'); e != std::string::npos) {
      std::string mant = s.substr(0, e), ex = s.substr(e + 1);
      const bool neg = ex[0] == '-';
      if (ex[0] == '+' || ex[0] == '-') ex.erase(0, 1);
      while (ex.size() > 1 && ex[0] == '0') ex.erase(0, 1);
      return mant + "e" + (neg ? "-" : "") + ex;
    }
    return s;
  }
  return buf;
}

/// Round tick positions covering [lo, hi] with a 1-2-5 step.
inline std::vector<double> nice_ticks(double lo, double hi, int target = 5) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  std::vector<double> t;
  for (double v = std::ceil(lo / step - 1e-9) * step; v <= hi + step * 1e-9; v += step) {
    t.push_back(std::abs(v) < step * 1e-9 ? 0.0 : v);
  }
  return t;
}

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;  // NaN entries break the line
  std::optional<Rgb> color;
  bool dashed = false;
  bool markers = false;
};

struct VerticalMarker {
  double x = 0.0;
  Rgb color = kBlack;
};

struct LinePlotOptions {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;
  std::size_t width = 640;
  std::size_t height = 420;
  std::vector<VerticalMarker> markers;  // dashed vertical lines
};

namespace detail {

struct Frame {
  int left = 70, right = 0, top = 30, bottom = 0;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool log_y = false;

  [[nodiscard]] int px(double x) const {
    return left + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (right - left)));
  }
  [[nodiscard]] int py(double y) const {
    const double v = log_y ? std::log10(y) : y;
    return bottom - static_cast<int>(std::lround((v - y0) / (y1 - y0) * (bottom - top)));
  }
};

inline void padded(double& lo, double& hi, double frac) {
  if (!(hi > lo)) {
    const double d = lo == 0.0 ? 1.0 : std::abs(lo) * 0.1;
    lo -= d;
    hi += d;
    return;
  }
  const double p = (hi - lo) * frac;
  lo -= p;
  hi += p;
}

inline void draw_axes(Canvas& cv, const Frame& f, const LinePlotOptions& o) {
  for (double t : nice_ticks(f.x0, f.x1)) {
    const int x = f.px(t);
    cv.line(x, f.top, x, f.bottom, kGrid);
    cv.line(x, f.bottom, x, f.bottom + 4, kBlack);
    cv.text_centered(x, f.bottom + 8, tick_label(t));
  }
  if (f.log_y) {
    for (int e = static_cast<int>(std::ceil(f.y0 - 1e-9)); e <= static_cast<int>(std::floor(f.y1 + 1e-9)); ++e) {
      const int y = f.py(std::pow(10.0, e));
      cv.line(f.left, y, f.right, y, kGrid);
      cv.line(f.left - 4, y, f.left, y, kBlack);
      const auto s = "1e" + std::to_string(e);
      cv.text(f.left - 7 - Canvas::text_width(s), y - 3, s);
    }
  } else {
    for (double t : nice_ticks(f.y0, f.y1)) {
      const int y = f.py(t);
      cv.line(f.left, y, f.right, y, kGrid);
      cv.line(f.left - 4, y, f.left, y, kBlack);
      const auto s = tick_label(t);
      cv.text(f.left - 7 - Canvas::text_width(s), y - 3, s);
    }
  }
  cv.rect(f.left, f.top, f.right, f.bottom, kBlack);
  cv.text_centered((f.left + f.right) / 2, 8, o.title, kBlack, 2);
  cv.text_centered((f.left + f.right) / 2, f.bottom + 22, o.x_label);
  cv.text(4, f.top - 12, o.y_label);
}

}  // namespace detail

/// Line chart with a legend in the top-right corner.
inline TactileImage line_plot(const std::vector<Series>& series, const LinePlotOptions& o = {}) {
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw InvalidArgument("series x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (o.log_y && s.y[i] <= 0.0)) continue;
      xlo = std::min(xlo, s.x[i]);
      xhi = std::max(xhi, s.x[i]);
      const double v = o.log_y ? std::log10(s.y[i]) : s.y[i];
      ylo = std::min(ylo, v);
      yhi = std::max(yhi, v);
    }
  }
  for (const auto& m : o.markers) {
    xlo = std::min(xlo, m.x);
    xhi = std::max(xhi, m.x);
  }
  if (!std::isfinite(xlo)) {
    xlo = ylo = 0.0;
    xhi = yhi = 1.0;
  }
  detail::Frame f;
  f.right = static_cast<int>(o.width) - 20;
  f.bottom = static_cast<int>(o.height) - 40;
  f.log_y = o.log_y;
  detail::padded(xlo, xhi, 0.0);
  detail::padded(ylo, yhi, 0.05);
  f.x0 = xlo;
  f.x1 = xhi;
  f.y0 = ylo;
  f.y1 = yhi;

  Canvas cv(o.width, o.height);
  detail::draw_axes(cv, f, o);
  for (const auto& m : o.markers) cv.line(f.px(m.x), f.top, f.px(m.x), f.bottom, m.color, 1, 4);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const Rgb c = s.color.value_or(palette(k));
    std::optional<std::pair<int, int>> prev;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (o.log_y && s.y[i] <= 0.0)) {
        prev.reset();
        continue;
      }
      const std::pair p{f.px(s.x[i]), f.py(s.y[i])};
      if (prev) cv.line(prev->first, prev->second, p.first, p.second, c, 2, s.dashed ? 6 : 0);
      if (s.markers) cv.fill_rect(p.first - 2, p.second - 2, p.first + 2, p.second + 2, c);
      prev = p;
    }
  }
  int ly = f.top + 8;
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (series[k].name.empty()) continue;
    const int x = f.right - 10 - Canvas::text_width(series[k].name) - 26;
    cv.line(x, ly + 3, x + 18, ly + 3, series[k].color.value_or(palette(k)), 2, series[k].dashed ? 6 : 0);
    cv.text(x + 24, ly, series[k].name);
    ly += 12;
  }
  return cv.take();
}

struct HeatmapOptions {
  std::string title;
  int cell = 4;  // pixels per map cell
  std::optional<double> lo, hi;
  std::string units;
};

/// Colour-mapped grid with a colour bar; NaN cells are grey.
inline TactileImage heatmap(const Array2D<double>& m, const HeatmapOptions& o = {}) {
  if (m.empty()) throw InvalidArgument("heatmap of an empty map");
  if (o.cell < 1) throw InvalidArgument("heatmap cell size must be positive");
  double lo = INFINITY, hi = -INFINITY;
  for (double v : m.values()) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  lo = o.lo.value_or(lo);
  hi = o.hi.value_or(hi);
  const double span = hi > lo ? hi - lo : 1.0;
  const int mw = static_cast<int>(m.cols()) * o.cell, mh = static_cast<int>(m.rows()) * o.cell;
  const int left = 10, top = 30;
  const int bar_x = left + mw + 12;
  const int width = bar_x + 16 + 8 + Canvas::text_width("-0.0000e-00") + 6;
  Canvas cv(static_cast<std::size_t>(std::max(width, Canvas::text_width(o.title, 2) + 20)),
            static_cast<std::size_t>(std::max(top + mh + 16, 150)));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      const Rgb col = std::isfinite(v) ? colormap((v - lo) / span) : kMissing;
      const int x = left + static_cast<int>(c) * o.cell, y = top + static_cast<int>(r) * o.cell;
      cv.fill_rect(x, y, x + o.cell - 1, y + o.cell - 1, col);
    }
  }
  const int bar_h = std::max(mh, 100);
  for (int y = 0; y < bar_h; ++y) {
    cv.fill_rect(bar_x, top + y, bar_x + 15, top + y, colormap(1.0 - static_cast<double>(y) / (bar_h - 1)));
  }
  cv.rect(bar_x, top, bar_x + 15, top + bar_h - 1, kBlack);
  cv.text(bar_x + 20, top, tick_label(hi) + (o.units.empty() ? "" : " " + o.units));
  cv.text(bar_x + 20, top + bar_h - 7, tick_label(lo));
  cv.text(left, 8, o.title, kBlack, 2);
  return cv.take();
}

struct ViolinGroup {
  std::string name;
  std::vector<double> values;
  std::optional<Rgb> color;
};

struct ViolinOptions {
  std::string title;
  std::string y_label;
  std::size_t width = 0;  // 0: 140 px per group
  std::size_t height = 420;
};

/// Mirrored Gaussian-KDE outlines (Silverman bandwidth) with a mean tick.
inline TactileImage violin_plot(const std::vector<ViolinGroup>& groups, const ViolinOptions& o = {}) {
  if (groups.empty()) throw InvalidArgument("violin plot needs at least one group");
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& g : groups) {
    for (double v : g.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  detail::padded(lo, hi, 0.05);
  const std::size_t width = o.width ? o.width : 90 + 140 * groups.size();
  detail::Frame f;
  f.right = static_cast<int>(width) - 20;
  f.bottom = static_cast<int>(o.height) - 40;
  f.x0 = 0.0;
  f.x1 = static_cast<double>(groups.size());
  f.y0 = lo;
  f.y1 = hi;
  Canvas cv(width, o.height);
  for (double t : nice_ticks(lo, hi)) {
    const int y = f.py(t);
    cv.line(f.left, y, f.right, y, kGrid);
    const auto s = tick_label(t);
    cv.text(f.left - 7 - Canvas::text_width(s), y - 3, s);
  }
  cv.rect(f.left, f.top, f.right, f.bottom, kBlack);
  cv.text_centered((f.left + f.right) / 2, 8, o.title, kBlack, 2);
  cv.text(4, f.top - 12, o.y_label);

  const double slot = static_cast<double>(f.right - f.left) / static_cast<double>(groups.size());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    const int cx = f.left + static_cast<int>(std::lround(slot * (static_cast<double>(k) + 0.5)));
    cv.text_centered(cx, f.bottom + 8, g.name);
    if (g.values.empty()) continue;
    const Rgb col = g.color.value_or(palette(k));
    const double n = static_cast<double>(g.values.size());
    double mean = 0.0, var = 0.0;
    for (double v : g.values) mean += v;
    mean /= n;
    for (double v : g.values) var += (v - mean) * (v - mean);
    const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    const double bw = sd > 0 ? 1.06 * sd * std::pow(n, -0.2) : (hi - lo) * 0.01;
    const auto [vmin, vmax] = std::minmax_element(g.values.begin(), g.values.end());
    // Density on the pixel rows between the sample extremes.
    const int ya = f.py(*vmax), yb = f.py(*vmin);
    std::vector<double> dens(static_cast<std::size_t>(yb - ya + 1), 0.0);
    double peak = 0.0;
    std::vector<double> sorted(g.values);
    std::sort(sorted.begin(), sorted.end());
    for (int y = ya; y <= yb; ++y) {
      const double v = f.y0 + (f.bottom - y) * (f.y1 - f.y0) / (f.bottom - f.top);
      double s = 0.0;
      auto it = std::lower_bound(sorted.begin(), sorted.end(), v - 5.0 * bw);
      for (; it != sorted.end() && *it <= v + 5.0 * bw; ++it) {
        const double z = (v - *it) / bw;
        s += std::exp(-0.5 * z * z);
      }
      dens[static_cast<std::size_t>(y - ya)] = s;
      peak = std::max(peak, s);
    }
    const double half = slot * 0.42;
    for (int y = ya; y <= yb; ++y) {
      const int w = peak > 0 ? static_cast<int>(std::lround(half * dens[static_cast<std::size_t>(y - ya)] / peak)) : 0;
      cv.line(cx - w, y, cx + w, y, col);
    }
    const int my = f.py(mean);
    cv.line(cx - static_cast<int>(half * 0.6), my, cx + static_cast<int>(half * 0.6), my, kBlack, 2);
  }
  return cv.take();
}

}  // namespace tactile_cal::report
