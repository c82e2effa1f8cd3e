#pragma once

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"

namespace tactile_cal::eval {

inline constexpr double kAlpha = 0.01;
inline constexpr std::size_t kComparisons = 5;
/// Bonferroni threshold alpha / m = 0.002.
inline constexpr double kCorrectedAlpha = kAlpha / static_cast<double>(kComparisons);

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw InvalidArgument("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance (n - 1 denominator); 0 for a single value.
inline double variance_of(std::span<const double> v) {
  const double m = mean_of(v);
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double stddev_of(std::span<const double> v) { return std::sqrt(variance_of(v)); }

// ---------------------------------------------------------------- density

struct KdeCurve {
  std::vector<double> support;
  std::vector<double> density;
  double bandwidth = 0.0;
};

inline constexpr double kKdeBandwidth = 0.0015;

/// Gaussian KDE on an even grid spanning [min - 5h, max + 5h].
inline KdeCurve gaussian_kde(std::span<const double> values, double bandwidth = kKdeBandwidth,
                             std::size_t points = 512) {
  if (values.empty()) throw InvalidArgument("KDE of an empty sample");
  if (!(bandwidth > 0.0)) throw InvalidArgument("KDE bandwidth must be positive");
  if (points < 2) throw InvalidArgument("KDE needs at least two support points");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it - 5.0 * bandwidth, hi = *hi_it + 5.0 * bandwidth;
  KdeCurve k;
  k.bandwidth = bandwidth;
  k.support.resize(points);
  k.density.assign(points, 0.0);
  const double step = (hi - lo) / static_cast<double>(points - 1);
  const double norm = 1.0 / (static_cast<double>(values.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + step * static_cast<double>(i);
    k.support[i] = x;
    double s = 0.0;
    for (double v : values) {
      const double z = (x - v) / bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    k.density[i] = s * norm;
  }
  return k;
}

/// Trapezoidal integral of the curve over its support.
inline double integrate(const KdeCurve& k) {
  double s = 0.0;
  for (std::size_t i = 1; i < k.support.size(); ++i) {
    s += 0.5 * (k.density[i] + k.density[i - 1]) * (k.support[i] - k.support[i - 1]);
  }
  return s;
}

struct Histogram {
  double origin = 0.0;  // left edge of bin 0
  double bin_width = 0.0;
  std::vector<std::size_t> counts;
};

/// Fixed-width histogram with edges on multiples of `bin_width`.
inline Histogram histogram(std::span<const double> values, double bin_width = kKdeBandwidth) {
  if (values.empty()) throw InvalidArgument("histogram of an empty sample");
  if (!(bin_width > 0.0)) throw InvalidArgument("bin width must be positive");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  Histogram h;
  h.bin_width = bin_width;
  h.origin = std::floor(*lo_it / bin_width) * bin_width;
  const auto bins = static_cast<std::size_t>(std::floor((*hi_it - h.origin) / bin_width)) + 1;
  h.counts.assign(bins, 0);
  for (double v : values) {
    const auto b = std::min(bins - 1, static_cast<std::size_t>(std::floor((v - h.origin) / bin_width)));
    ++h.counts[b];
  }
  return h;
}

// ---------------------------------------------------------------- tests

struct TestResult {
  double statistic = 0.0;  // t, or U of the first sample
  double df = std::numeric_limits<double>::quiet_NaN();
  double p_value = 1.0;
  bool significant = false;  // p < corrected alpha
  bool degenerate = false;   // both samples constant
  std::string method;
};

namespace detail {

inline void require_two(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("significance tests need at least two values per sample");
}

inline TestResult t_result(double diff, double se, double df, double alpha, const char* method) {
  TestResult r;
  r.method = method;
  r.df = df;
  if (se == 0.0) {
    // Both samples constant: equal means are indistinguishable, unequal ones
    // are separated in the limit.
    r.degenerate = true;
    r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p_value = diff == 0.0 ? 1.0 : 0.0;
  } else {
    r.statistic = diff / se;
    const boost::math::students_t dist(df);
    r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic))));
  }
  r.significant = r.p_value < alpha;
  return r;
}

}  // namespace detail

/// Two-sided Welch t-test with Welch-Satterthwaite degrees of freedom.
inline TestResult welch_t_test(std::span<const double> a, std::span<const double> b,
                               double alpha = kCorrectedAlpha) {
  detail::require_two(a, b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = variance_of(a) / na, vb = variance_of(b) / nb;
  const double se2 = va + vb;
  const double df = se2 > 0.0 ? se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0)) : na + nb - 2.0;
  return detail::t_result(mean_of(a) - mean_of(b), std::sqrt(se2), df, alpha, "welch");
}

/// Two-sided Student t-test with pooled variance.
inline TestResult student_t_test(std::span<const double> a, std::span<const double> b,
                                 double alpha = kCorrectedAlpha) {
  detail::require_two(a, b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sp2 = ((na - 1.0) * variance_of(a) + (nb - 1.0) * variance_of(b)) / (na + nb - 2.0);
  const double se = std::sqrt(sp2 * (1.0 / na + 1.0 / nb));
  return detail::t_result(mean_of(a) - mean_of(b), se, na + nb - 2.0, alpha, "student");
}

inline TestResult t_test(std::span<const double> a, std::span<const double> b, bool pooled,
                         double alpha = kCorrectedAlpha) {
  return pooled ? student_t_test(a, b, alpha) : welch_t_test(a, b, alpha);
}

/// Midranks (1-based) of the concatenation a ++ b.
inline std::vector<double> midranks(std::span<const double> a, std::span<const double> b) {
  std::vector<double> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return all[i] < all[j]; });
  std::vector<double> rank(all.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && all[idx[j + 1]] == all[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

/// Number of arrangements of m first-sample and n second-sample ranks giving
/// each U in [0, m n] (no ties).
inline std::vector<double> mann_whitney_counts(std::size_t m, std::size_t n) {
  // f[i][j][u] = f[i-1][j][u-j] + f[i][j-1][u], rolled over j.
  std::vector<std::vector<double>> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = {1.0};  // i = 0: U = 0 only
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 0; j <= n; ++j) {
      cur[j].assign(i * j + 1, 0.0);
      for (std::size_t u = 0; u < prev[j].size(); ++u) cur[j][u + j] += prev[j][u];
      if (j > 0) {
        for (std::size_t u = 0; u < cur[j - 1].size(); ++u) cur[j][u] += cur[j - 1][u];
      }
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

/// Largest sample size for which the exact null distribution is used.
inline constexpr std::size_t kExactMannWhitneyMax = 20;

/// Two-sided Mann-Whitney U test. statistic = U of `a` (pairs with a > b,
/// ties counting 1/2). Exact distribution when both samples have at most 20
/// values and there are no ties; otherwise the normal approximation with tie
/// correction and continuity correction.
inline TestResult mann_whitney_u(std::span<const double> a, std::span<const double> b,
                                 double alpha = kCorrectedAlpha) {
  detail::require_two(a, b);
  const std::size_t m = a.size(), n = b.size();
  const auto rank = midranks(a, b);
  double ra = 0.0;
  for (std::size_t i = 0; i < m; ++i) ra += rank[i];
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  const double u = ra - md * (md + 1.0) / 2.0;
  const double mu = md * nd / 2.0;

  std::vector<double> sorted(rank);
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  TestResult r;
  r.statistic = u;
  if (tie_term == 0.0 && m <= kExactMannWhitneyMax && n <= kExactMannWhitneyMax) {
    r.method = "mann-whitney-exact";
    const auto counts = mann_whitney_counts(m, n);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto k = static_cast<std::size_t>(std::llround(std::min(u, md * nd - u)));
    double tail = 0.0;
    for (std::size_t i = 0; i <= k; ++i) tail += counts[i];
    r.p_value = std::min(1.0, 2.0 * tail / total);
  } else {
    r.method = "mann-whitney-normal";
    const double N = md + nd;
    const double var = md * nd / 12.0 * ((N + 1.0) - tie_term / (N * (N - 1.0)));
    if (var <= 0.0) {
      r.degenerate = true;
      r.p_value = 1.0;  // every value tied
    } else {
      const double dev = std::max(0.0, std::abs(u - mu) - 0.5);
      r.p_value = std::min(1.0, std::erfc(dev / std::sqrt(2.0 * var)));
    }
  }
  r.significant = r.p_value < alpha;
  return r;
}

}  // namespace tactile_cal::eval
