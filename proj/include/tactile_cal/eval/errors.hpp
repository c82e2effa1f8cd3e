#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "tactile_cal/core/array2d.hpp"
#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"

namespace tactile_cal::eval {

/// Integer translation in pixels: dx along columns, dy along rows.
struct PixelShift {
  int dx = 0;
  int dy = 0;

  bool operator==(const PixelShift&) const = default;
};

/// out(r, c) = m(r - dy, c - dx), zero where that falls outside.
inline Array2D<double> shift_map(const Array2D<double>& m, PixelShift s) {
  Array2D<double> out(m.rows(), m.cols());
  const auto R = static_cast<long>(m.rows()), C = static_cast<long>(m.cols());
  for (long r = 0; r < R; ++r) {
    const long sr = r - s.dy;
    if (sr < 0 || sr >= R) continue;
    for (long c = 0; c < C; ++c) {
      const long sc = c - s.dx;
      if (sc < 0 || sc >= C) continue;
      out(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
    }
  }
  return out;
}

inline DepthMap shift_map(const DepthMap& m, PixelShift s) { return {shift_map(m.values, s), m.pitch_mm, m.units}; }

/// The shift s maximizing sum_p pred(p) * gt(p - s) over every overlap of
/// the zero-padded maps (|dx| < cols, |dy| < rows, or up to `max_shift`).
/// Applying it to the ground truth (shift_map(gt, s)) aligns it with the
/// prediction. Ties go to the smaller |s|, then to the smaller (dx, dy).
inline PixelShift align_xcorr(const Array2D<double>& pred, const Array2D<double>& gt,
                              std::optional<int> max_shift = std::nullopt) {
  if (!same_shape(pred, gt)) throw InvalidArgument("align_xcorr needs maps of equal size");
  struct Tap {
    long r, c;
    double v;
  };
  std::vector<Tap> taps;
  for (std::size_t r = 0; r < gt.rows(); ++r) {
    for (std::size_t c = 0; c < gt.cols(); ++c) {
      if (gt(r, c) != 0.0) taps.push_back({static_cast<long>(r), static_cast<long>(c), gt(r, c)});
    }
  }
  if (taps.empty()) throw UndefinedError("alignment is undefined for an all-zero ground truth");
  const auto R = static_cast<long>(pred.rows()), C = static_cast<long>(pred.cols());
  const long my = max_shift ? std::min<long>(*max_shift, R - 1) : R - 1;
  const long mx = max_shift ? std::min<long>(*max_shift, C - 1) : C - 1;
  PixelShift best;
  double best_v = -std::numeric_limits<double>::infinity();
  long best_mag = 0;
  for (long dy = -my; dy <= my; ++dy) {
    for (long dx = -mx; dx <= mx; ++dx) {
      double acc = 0.0;
      for (const auto& t : taps) {
        const long r = t.r + dy, c = t.c + dx;
        if (r >= 0 && r < R && c >= 0 && c < C) acc += t.v * pred(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      }
      const long mag = dx * dx + dy * dy;
      const bool better = acc > best_v ||
                          (acc == best_v && (mag < best_mag || (mag == best_mag && std::pair{dx, dy} < std::pair<long, long>{best.dx, best.dy})));
      if (better) {
        best_v = acc;
        best_mag = mag;
        best = {static_cast<int>(dx), static_cast<int>(dy)};
      }
    }
  }
  return best;
}

inline PixelShift align_xcorr(const DepthMap& pred, const DepthMap& gt, std::optional<int> max_shift = std::nullopt) {
  return align_xcorr(pred.values, gt.values, max_shift);
}

inline constexpr double kMinDepthScale = 0.5;
inline constexpr double kMaxDepthScale = 2.0;

struct ScaleFit {
  double scale = 1.0;      // clamped to [0.5, 2.0]
  double unclamped = 1.0;  // closed-form optimum
  bool clamped = false;    // warning: the optimum lay outside the range
};

/// s* = <gt, pred> / <gt, gt>, the minimizer of MSE(s * gt, pred).
inline ScaleFit fit_depth_scale(const Array2D<double>& aligned_gt, const Array2D<double>& pred) {
  if (!same_shape(aligned_gt, pred)) throw InvalidArgument("fit_depth_scale needs maps of equal size");
  double gp = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    gp += aligned_gt.values()[i] * pred.values()[i];
    gg += aligned_gt.values()[i] * aligned_gt.values()[i];
  }
  if (gg == 0.0) throw UndefinedError("depth scale is undefined for an all-zero ground truth");
  ScaleFit f;
  f.unclamped = gp / gg;
  f.scale = std::clamp(f.unclamped, kMinDepthScale, kMaxDepthScale);
  f.clamped = f.scale != f.unclamped;
  return f;
}

/// Alternative adjustment: an additive offset on the contact region,
/// c* = mean(pred - gt) over gt > 0 (minimizer of MSE(gt + c [gt > 0], pred)).
inline double fit_depth_offset(const Array2D<double>& aligned_gt, const Array2D<double>& pred) {
  if (!same_shape(aligned_gt, pred)) throw InvalidArgument("fit_depth_offset needs maps of equal size");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (aligned_gt.values()[i] > 0.0) {
      sum += pred.values()[i] - aligned_gt.values()[i];
      ++n;
    }
  }
  if (n == 0) throw UndefinedError("depth offset is undefined for an all-zero ground truth");
  return sum / static_cast<double>(n);
}

/// Linear-interpolated percentile (q in [0, 100]) of unsorted values.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/// Mean absolute depth errors in micrometres. Type 1: pixels whose ground
/// truth is exactly 0; type 2: all others. Empty classes report NaN.
struct ErrorReport {
  double overall_um = 0.0;
  double type1_um = 0.0;
  double type2_um = 0.0;
  std::size_t n_type1 = 0;
  std::size_t n_type2 = 0;
  Array2D<double> error_um;  // per-pixel |pred - gt|
  Array2D<std::uint8_t> is_type1;
  double type1_p95_um = 0.0;  // display cut-off for violin plots
};

inline ErrorReport error_report(const DepthMap& pred, const DepthMap& adjusted_gt) {
  if (!same_shape(pred.values, adjusted_gt.values)) throw InvalidArgument("error_report needs maps of equal size");
  if (pred.values.empty()) throw InvalidArgument("error_report needs non-empty maps");
  const double to_um = 1000.0;
  ErrorReport r;
  r.error_um = Array2D<double>(pred.rows(), pred.cols());
  r.is_type1 = Array2D<std::uint8_t>(pred.rows(), pred.cols());
  double s1 = 0.0, s2 = 0.0;
  std::vector<double> t1;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const double g = adjusted_gt.values.values()[i];
    const double e = std::abs(pred.values.values()[i] - g) * to_um;
    r.error_um.values()[i] = e;
    if (g == 0.0) {
      r.is_type1.values()[i] = 1;
      s1 += e;
      ++r.n_type1;
      t1.push_back(e);
    } else {
      s2 += e;
      ++r.n_type2;
    }
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.type1_um = r.n_type1 ? s1 / static_cast<double>(r.n_type1) : nan;
  r.type2_um = r.n_type2 ? s2 / static_cast<double>(r.n_type2) : nan;
  r.overall_um = (s1 + s2) / static_cast<double>(r.n_type1 + r.n_type2);
  r.type1_p95_um = percentile(std::move(t1), 95.0);
  return r;
}

/// Violin populations: type 1 truncated at its 95th percentile (display
/// only; the means above use every pixel), type 2 in full.
struct ViolinData {
  std::vector<double> type1_um;
  std::vector<double> type2_um;
};

inline ViolinData violin_data(const ErrorReport& r) {
  ViolinData v;
  for (std::size_t i = 0; i < r.error_um.size(); ++i) {
    const double e = r.error_um.values()[i];
    if (r.is_type1.values()[i]) {
      if (e <= r.type1_p95_um) v.type1_um.push_back(e);
    } else {
      v.type2_um.push_back(e);
    }
  }
  return v;
}

enum class DepthAdjust { scale, offset };

struct ObjectEvaluation {
  PixelShift shift;
  ScaleFit scale;
  double offset_mm = 0.0;
  DepthMap aligned_gt;  // shifted and adjusted
  ErrorReport report;
  double max_gt_depth_mm = 0.0;  // of the unadjusted ground truth
};

/// Full object comparison: cross-correlation alignment of the ground truth,
/// depth adjustment, then the error taxonomy. Negative predicted depth is
/// clipped to 0 first when `clamp_prediction` (the solver returns it raw).
inline ObjectEvaluation evaluate_object(DepthMap pred, const DepthMap& gt, DepthAdjust adjust = DepthAdjust::scale,
                                        bool clamp_prediction = true) {
  if (clamp_prediction) {
    for (auto& v : pred.values.values()) v = std::max(v, 0.0);
  }
  ObjectEvaluation ev;
  ev.max_gt_depth_mm = max_value(gt.values);
  ev.shift = align_xcorr(pred, gt);
  ev.aligned_gt = shift_map(gt, ev.shift);
  if (adjust == DepthAdjust::scale) {
    ev.scale = fit_depth_scale(ev.aligned_gt.values, pred.values);
    for (auto& v : ev.aligned_gt.values.values()) v *= ev.scale.scale;
  } else {
    ev.offset_mm = fit_depth_offset(ev.aligned_gt.values, pred.values);
    for (auto& v : ev.aligned_gt.values.values()) {
      if (v > 0.0) v = std::max(0.0, v + ev.offset_mm);
    }
  }
  ev.report = error_report(pred, ev.aligned_gt);
  return ev;
}

}  // namespace tactile_cal::eval
