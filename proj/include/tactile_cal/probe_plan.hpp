#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/core/text.hpp"

namespace tactile_cal::plan {

/// Commanded probe location in printer millimetres.
struct ProbePoint {
  double x_mm = 0.0;
  double y_mm = 0.0;
  double depth_mm = 0.0;

  bool operator==(const ProbePoint&) const = default;
  auto operator<=>(const ProbePoint&) const = default;
};

struct Extent {
  double width_mm = 0.0;
  double height_mm = 0.0;

  bool operator==(const Extent&) const = default;
};

struct ProbePlan {
  std::vector<ProbePoint> points;
  double spacing_mm = 0.0;  // 0 when the plan did not come from a grid
  Extent extent;
  std::size_t frames_per_indent = 30;

  [[nodiscard]] std::size_t size() const noexcept { return points.size(); }
  bool operator==(const ProbePlan&) const = default;
};

/// Fraction of coordinates reserved for the shared validation holdout.
inline constexpr double kHoldoutFraction = 0.20;
/// Largest admissible training fraction (everything outside the holdout).
inline constexpr double kMaxTrainFraction = 0.80;
inline constexpr std::uint64_t kDefaultHoldoutSeed = 20240917;

struct PlanSplit {
  std::vector<std::size_t> train_indices;  // sorted
  std::vector<std::size_t> val_indices;    // sorted
  double fraction_P = kMaxTrainFraction;
  std::uint64_t seed = 0;

  bool operator==(const PlanSplit&) const = default;
};

/// Checks plan invariants; throws ValidationError.
inline void validate(const ProbePlan& p) {
  if (p.frames_per_indent < 1) throw ValidationError("frames_per_indent must be >= 1");
  std::set<std::tuple<double, double, double>> seen;
  const bool has_extent = p.extent.width_mm > 0.0 && p.extent.height_mm > 0.0;
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    const auto& q = p.points[i];
    if (!std::isfinite(q.x_mm) || !std::isfinite(q.y_mm) || !std::isfinite(q.depth_mm)) {
      throw ValidationError("point " + std::to_string(i) + " is not finite");
    }
    if (q.depth_mm < 0.0) throw ValidationError("point " + std::to_string(i) + " has negative depth");
    if (has_extent) {
      constexpr double tol = 1e-9;
      if (q.x_mm < -tol || q.y_mm < -tol || q.x_mm > p.extent.width_mm + tol ||
          q.y_mm > p.extent.height_mm + tol) {
        throw ValidationError("point " + std::to_string(i) + " lies outside the plan extent");
      }
    }
    if (!seen.emplace(q.x_mm, q.y_mm, q.depth_mm).second) {
      throw ValidationError("duplicate probe point at index " + std::to_string(i));
    }
  }
}

/// Points per axis for an inclusive-endpoint grid.
inline std::size_t grid_count(double extent_mm, double spacing_mm) {
  return static_cast<std::size_t>(std::floor(extent_mm / spacing_mm + 1e-9)) + 1;
}

/// Row-major (y outer, x inner) grid over [0, width] x [0, height].
inline ProbePlan generate_grid(Extent extent, double spacing_mm, double depth_mm,
                               std::size_t frames_per_indent) {
  if (!(spacing_mm > 0.0)) throw InvalidArgument("spacing must be positive");
  if (!(extent.width_mm > 0.0) || !(extent.height_mm > 0.0)) throw InvalidArgument("extent must be positive");
  if (!(depth_mm >= 0.0)) throw InvalidArgument("depth must be non-negative");
  if (frames_per_indent < 1) throw InvalidArgument("frames_per_indent must be >= 1");
  ProbePlan p;
  p.spacing_mm = spacing_mm;
  p.extent = extent;
  p.frames_per_indent = frames_per_indent;
  const std::size_t nx = grid_count(extent.width_mm, spacing_mm);
  const std::size_t ny = grid_count(extent.height_mm, spacing_mm);
  p.points.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      p.points.push_back({static_cast<double>(i) * spacing_mm, static_cast<double>(j) * spacing_mm, depth_mm});
    }
  }
  return p;
}

/// The fixed validation holdout: round(0.2 n) indices drawn with `holdout_seed`.
inline std::vector<std::size_t> make_holdout(std::size_t n, std::uint64_t holdout_seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(derive_seed(holdout_seed, 0x686f6c64));
  rng.shuffle(idx);
  idx.resize(static_cast<std::size_t>(std::llround(kHoldoutFraction * static_cast<double>(n))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Training subset of size round(P n) drawn uniformly from the coordinates not
/// in `val_indices`. Subsets for different P are drawn independently.
inline PlanSplit split_with_holdout(std::size_t n, double fraction_P, std::uint64_t seed,
                                    std::vector<std::size_t> val_indices) {
  if (!(fraction_P > 0.0)) throw InvalidArgument("fraction_P must be positive");
  if (fraction_P > kMaxTrainFraction + 1e-12) {
    throw InvalidArgument("fraction_P above 0.80 would overlap the validation holdout");
  }
  std::sort(val_indices.begin(), val_indices.end());
  std::vector<bool> is_val(n, false);
  for (auto v : val_indices) {
    if (v >= n) throw InvalidArgument("validation index out of range");
    is_val[v] = true;
  }
  std::vector<std::size_t> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!is_val[i]) pool.push_back(i);
  }
  auto want = static_cast<std::size_t>(std::llround(fraction_P * static_cast<double>(n)));
  want = std::min(want, pool.size());
  Rng rng(derive_seed(seed, 0x747261696e));
  rng.shuffle(pool);
  pool.resize(want);
  std::sort(pool.begin(), pool.end());
  return PlanSplit{std::move(pool), std::move(val_indices), fraction_P, seed};
}

inline PlanSplit split_plan(const ProbePlan& plan, double fraction_P, std::uint64_t seed,
                            std::uint64_t holdout_seed = kDefaultHoldoutSeed) {
  return split_with_holdout(plan.size(), fraction_P, seed, make_holdout(plan.size(), holdout_seed));
}

// ---------------------------------------------------------------- CSV I/O

inline constexpr std::string_view kPlanHeader = "x_mm,y_mm,depth_mm";

/// Strict CSV: fixed header, three numeric columns per row, blank lines
/// skipped. Points only: grid metadata (spacing, extent) is not stored, so the
/// returned plan has a zero extent (unconstrained) and zero spacing.
inline ProbePlan read_plan_csv(std::string_view text, std::size_t frames_per_indent = 30) {
  const auto ls = text::lines(text);
  if (ls.empty() || text::trim(ls[0]) != kPlanHeader) {
    throw ParseError(1, "expected header '" + std::string(kPlanHeader) + "'");
  }
  ProbePlan p;
  p.frames_per_indent = frames_per_indent;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (text::trim(ls[i]).empty()) continue;
    const auto fields = text::split(ls[i], ',');
    if (fields.size() != 3) {
      throw ParseError(line_no, "expected 3 columns, found " + std::to_string(fields.size()));
    }
    ProbePoint q;
    if (!text::parse_double(fields[0], q.x_mm)) throw ParseError(line_no, "bad x_mm value");
    if (!text::parse_double(fields[1], q.y_mm)) throw ParseError(line_no, "bad y_mm value");
    if (!text::parse_double(fields[2], q.depth_mm)) throw ParseError(line_no, "bad depth_mm value");
    if (q.depth_mm < 0.0) throw ValidationError("line " + std::to_string(line_no) + ": negative depth");
    p.points.push_back(q);
  }
  validate(p);
  return p;
}

inline std::string write_plan_csv(const ProbePlan& p) {
  std::string out(kPlanHeader);
  out += '\n';
  for (const auto& q : p.points) {
    out += text::format_double(q.x_mm);
    out += ',';
    out += text::format_double(q.y_mm);
    out += ',';
    out += text::format_double(q.depth_mm);
    out += '\n';
  }
  return out;
}

/// Split file: `index,role` rows, role in {train, val}, ascending index.
inline std::string write_split_csv(const PlanSplit& s) {
  std::vector<std::pair<std::size_t, bool>> rows;
  for (auto i : s.train_indices) rows.emplace_back(i, true);
  for (auto i : s.val_indices) rows.emplace_back(i, false);
  std::sort(rows.begin(), rows.end());
  std::ostringstream os;
  os << "index,role\n";
  for (const auto& [i, train] : rows) os << i << ',' << (train ? "train" : "val") << '\n';
  return os.str();
}

inline PlanSplit read_split_csv(std::string_view text, std::size_t plan_size) {
  const auto ls = text::lines(text);
  if (ls.empty() || text::trim(ls[0]) != "index,role") throw ParseError(1, "expected header 'index,role'");
  PlanSplit s;
  std::set<std::size_t> seen;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (text::trim(ls[i]).empty()) continue;
    const auto f = text::split(ls[i], ',');
    if (f.size() != 2) throw ParseError(line_no, "expected 2 columns");
    std::uint64_t idx = 0;
    if (!text::parse_u64(f[0], idx)) throw ParseError(line_no, "bad index");
    if (idx >= plan_size) throw ValidationError("line " + std::to_string(line_no) + ": index out of range");
    if (!seen.insert(idx).second) throw ValidationError("line " + std::to_string(line_no) + ": duplicate index");
    const auto role = text::trim(f[1]);
    if (role == "train") {
      s.train_indices.push_back(idx);
    } else if (role == "val") {
      s.val_indices.push_back(idx);
    } else {
      throw ParseError(line_no, "role must be 'train' or 'val'");
    }
  }
  s.fraction_P = plan_size ? static_cast<double>(s.train_indices.size()) / static_cast<double>(plan_size) : 0.0;
  return s;
}

}  // namespace tactile_cal::plan
