#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <tuple>
#include <utility>
#include <vector>

#include "tactile_cal/core/array2d.hpp"
#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"

namespace tactile_cal::poisson {

// ------------------------------------------------------------------- FFT
// Batched complex transforms on split re/im arrays laid out [len][lanes]:
// every butterfly runs across the contiguous lane axis, which the compiler
// vectorizes.

namespace fft {

inline bool is_pow2(std::size_t n) { return n && (n & (n - 1)) == 0; }

inline std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

/// Radix-2, power-of-two length, forward sign e^{-i}.
class Radix2 {
 public:
  explicit Radix2(std::size_t n) : n_(n), rev_(n), cos_(n / 2), sin_(n / 2) {
    if (!is_pow2(n)) throw InvalidArgument("radix-2 length must be a power of two");
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      rev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      cos_[k] = std::cos(a);
      sin_[k] = std::sin(a);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }

  /// In place; `inverse` flips the twiddle sign (no 1/n scaling).
  void run(double* re, double* im, std::size_t lanes, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i) {
      const std::size_t j = rev_[i];
      if (j > i) {
        std::swap_ranges(re + i * lanes, re + (i + 1) * lanes, re + j * lanes);
        std::swap_ranges(im + i * lanes, im + (i + 1) * lanes, im + j * lanes);
      }
    }
    const double sgn = inverse ? -1.0 : 1.0;
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2, step = n_ / len;
      for (std::size_t base = 0; base < n_; base += len) {
        for (std::size_t j = 0; j < half; ++j) {
          const double wr = cos_[j * step], wi = sgn * sin_[j * step];
          double* __restrict ar = re + (base + j) * lanes;
          double* __restrict ai = im + (base + j) * lanes;
          double* __restrict br = re + (base + j + half) * lanes;
          double* __restrict bi = im + (base + j + half) * lanes;
          for (std::size_t l = 0; l < lanes; ++l) {
            const double tr = br[l] * wr - bi[l] * wi;
            const double ti = br[l] * wi + bi[l] * wr;
            br[l] = ar[l] - tr;
            bi[l] = ai[l] - ti;
            ar[l] += tr;
            ai[l] += ti;
          }
        }
      }
    }
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> rev_;
  std::vector<double> cos_, sin_;
};

/// Forward DFT of any length: radix-2 directly, otherwise Bluestein's chirp-z
/// reduction to a power-of-two convolution.
class Dft {
 public:
  explicit Dft(std::size_t n) : n_(n) {
    if (n == 0) throw InvalidArgument("DFT length must be positive");
    if (is_pow2(n)) {
      direct_ = std::make_unique<Radix2>(n);
      return;
    }
    m_ = next_pow2(2 * n - 1);
    conv_ = std::make_unique<Radix2>(m_);
    wr_.resize(n);
    wi_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      // k^2 mod 2n keeps the phase argument small
      const auto k2 = static_cast<double>((k * k) % (2 * n));
      const double a = -std::numbers::pi * k2 / static_cast<double>(n);
      wr_[k] = std::cos(a);
      wi_[k] = std::sin(a);
    }
    // FFT of b_j = conj(w_j) on the wrapped index range (-n, n), pre-scaled by 1/m.
    br_.assign(m_, 0.0);
    bi_.assign(m_, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      br_[j] = wr_[j];
      bi_[j] = -wi_[j];
      if (j) {
        br_[m_ - j] = wr_[j];
        bi_[m_ - j] = -wi_[j];
      }
    }
    conv_->run(br_.data(), bi_.data(), 1, false);
    for (std::size_t j = 0; j < m_; ++j) {
      br_[j] /= static_cast<double>(m_);
      bi_[j] /= static_cast<double>(m_);
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }

  /// Forward transform of `lanes` interleaved sequences, in place.
  void forward(double* re, double* im, std::size_t lanes) const {
    if (direct_) {
      direct_->run(re, im, lanes, false);
      return;
    }
    scratch_r_.assign(m_ * lanes, 0.0);
    scratch_i_.assign(m_ * lanes, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const double cr = wr_[j], ci = wi_[j];
      const double* xr = re + j * lanes;
      const double* xi = im + j * lanes;
      double* ar = scratch_r_.data() + j * lanes;
      double* ai = scratch_i_.data() + j * lanes;
      for (std::size_t l = 0; l < lanes; ++l) {
        ar[l] = xr[l] * cr - xi[l] * ci;
        ai[l] = xr[l] * ci + xi[l] * cr;
      }
    }
    conv_->run(scratch_r_.data(), scratch_i_.data(), lanes, false);
    for (std::size_t j = 0; j < m_; ++j) {
      const double cr = br_[j], ci = bi_[j];
      double* ar = scratch_r_.data() + j * lanes;
      double* ai = scratch_i_.data() + j * lanes;
      for (std::size_t l = 0; l < lanes; ++l) {
        const double tr = ar[l] * cr - ai[l] * ci;
        ai[l] = ar[l] * ci + ai[l] * cr;
        ar[l] = tr;
      }
    }
    conv_->run(scratch_r_.data(), scratch_i_.data(), lanes, true);
    for (std::size_t k = 0; k < n_; ++k) {
      const double cr = wr_[k], ci = wi_[k];
      const double* ar = scratch_r_.data() + k * lanes;
      const double* ai = scratch_i_.data() + k * lanes;
      double* xr = re + k * lanes;
      double* xi = im + k * lanes;
      for (std::size_t l = 0; l < lanes; ++l) {
        xr[l] = ar[l] * cr - ai[l] * ci;
        xi[l] = ar[l] * ci + ai[l] * cr;
      }
    }
  }

 private:
  std::size_t n_;
  std::size_t m_ = 0;
  std::unique_ptr<Radix2> direct_;
  std::unique_ptr<Radix2> conv_;
  std::vector<double> wr_, wi_, br_, bi_;
  mutable std::vector<double> scratch_r_, scratch_i_;
};

}  // namespace fft

// ----------------------------------------------------------------- DST-I

/// F_k = sum_{j=1..n} f_j sin(pi j k / (n + 1)), k = 1..n, applied to every
/// column of an [n][lines] array. Two real lines share one complex FFT of
/// length n + 1 after the standard odd-symmetry pre-twiddle.
class Dst1 {
 public:
  explicit Dst1(std::size_t n) : n_(n), big_n_(n + 1), dft_(n + 1), s_(n + 1) {
    if (n == 0) throw InvalidArgument("DST length must be positive");
    for (std::size_t j = 0; j <= n; ++j) {
      s_[j] = std::sin(std::numbers::pi * static_cast<double>(j) / static_cast<double>(big_n_));
    }
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }

  void apply(const double* in, double* out, std::size_t lines) const {
    const std::size_t lanes = (lines + 1) / 2;
    zr_.assign(big_n_ * lanes, 0.0);
    zi_.assign(big_n_ * lanes, 0.0);
    auto f = [&](std::size_t j, std::size_t line) -> double {
      // f_0 = f_N = 0
      return (j == 0 || j == big_n_ || line >= lines) ? 0.0 : in[(j - 1) * lines + line];
    };
    for (std::size_t j = 1; j < big_n_; ++j) {
      const double s = s_[j];
      double* yr = zr_.data() + j * lanes;
      double* yi = zi_.data() + j * lanes;
      if (lines % 2 == 0) {
        const double* a = in + (j - 1) * lines;
        const double* b = in + (big_n_ - j - 1) * lines;
        for (std::size_t l = 0; l < lanes; ++l) {
          const double fa = a[2 * l], ga = b[2 * l];
          const double fb = a[2 * l + 1], gb = b[2 * l + 1];
          yr[l] = s * (fa + ga) + 0.5 * (fa - ga);
          yi[l] = s * (fb + gb) + 0.5 * (fb - gb);
        }
      } else {
        for (std::size_t l = 0; l < lanes; ++l) {
          const double fa = f(j, 2 * l), ga = f(big_n_ - j, 2 * l);
          const double fb = f(j, 2 * l + 1), gb = f(big_n_ - j, 2 * l + 1);
          yr[l] = s * (fa + ga) + 0.5 * (fa - ga);
          yi[l] = s * (fb + gb) + 0.5 * (fb - gb);
        }
      }
    }
    dft_.forward(zr_.data(), zi_.data(), lanes);
    // Unpack Y_k for both lines of a lane, then run the odd/even recurrence:
    //   F_1 = Re Y_0 / 2,  F_{2k} = -Im Y_k,  F_{2k+1} = F_{2k-1} + Re Y_k.
    odd_a_.assign(lanes, 0.0);
    odd_b_.assign(lanes, 0.0);
    const std::size_t kmax = big_n_ / 2;
    for (std::size_t k = 0; k <= kmax; ++k) {
      const std::size_t kc = k == 0 ? 0 : big_n_ - k;
      const double* pr = zr_.data() + k * lanes;
      const double* pi = zi_.data() + k * lanes;
      const double* qr = zr_.data() + kc * lanes;
      const double* qi = zi_.data() + kc * lanes;
      const std::size_t even = 2 * k, odd = 2 * k + 1;
      for (std::size_t l = 0; l < lanes; ++l) {
        // A = (Z_k + conj Z_{N-k}) / 2,  B = (Z_k - conj Z_{N-k}) / (2i)
        const double ar = 0.5 * (pr[l] + qr[l]);
        const double ai = 0.5 * (pi[l] - qi[l]);
        const double br = 0.5 * (pi[l] + qi[l]);
        const double bi = -0.5 * (pr[l] - qr[l]);
        const std::size_t la = 2 * l, lb = 2 * l + 1;
        if (k == 0) {
          odd_a_[l] = 0.5 * ar;
          odd_b_[l] = 0.5 * br;
        } else {
          if (even <= n_) {
            out[(even - 1) * lines + la] = -ai;
            if (lb < lines) out[(even - 1) * lines + lb] = -bi;
          }
          odd_a_[l] += ar;
          odd_b_[l] += br;
        }
        if (odd <= n_) {
          out[(odd - 1) * lines + la] = odd_a_[l];
          if (lb < lines) out[(odd - 1) * lines + lb] = odd_b_[l];
        }
      }
    }
  }

 private:
  std::size_t n_, big_n_;
  fft::Dft dft_;
  std::vector<double> s_;
  mutable std::vector<double> zr_, zi_, odd_a_, odd_b_;
};

// ------------------------------------------------------------ divergence

using DivergenceField = Array2D<double>;

/// d(gx)/dx + d(gy)/dy with central differences, one-sided on the border.
inline DivergenceField divergence(const GradientMap& g, double pitch_mm) {
  const std::size_t rows = g.rows(), cols = g.cols();
  if (rows < 2 || cols < 2) throw InvalidArgument("divergence needs at least 2x2 samples");
  if (!(pitch_mm > 0.0)) throw InvalidArgument("pitch must be positive");
  DivergenceField d(rows, cols);
  const double inv = 1.0 / pitch_mm, inv2 = 0.5 / pitch_mm;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      double dx, dy;
      if (c == 0) {
        dx = (g.gx(r, 1) - g.gx(r, 0)) * inv;
      } else if (c == cols - 1) {
        dx = (g.gx(r, c) - g.gx(r, c - 1)) * inv;
      } else {
        dx = (g.gx(r, c + 1) - g.gx(r, c - 1)) * inv2;
      }
      if (r == 0) {
        dy = (g.gy(1, c) - g.gy(0, c)) * inv;
      } else if (r == rows - 1) {
        dy = (g.gy(r, c) - g.gy(r - 1, c)) * inv;
      } else {
        dy = (g.gy(r + 1, c) - g.gy(r - 1, c)) * inv2;
      }
      d(r, c) = dx + dy;
    }
  }
  return d;
}

// ----------------------------------------------------------------- solver

/// Dirichlet Poisson solver on a fixed rows x cols grid: border pixels are
/// held at 0 and the interior satisfies the 5-point Laplacian equation.
/// Reusable; not thread-safe (per-thread instances are cheap).
class DirichletSolver {
 public:
  DirichletSolver(std::size_t rows, std::size_t cols, double pitch_mm)
      : rows_(rows), cols_(cols), nr_(rows - 2), nc_(cols - 2), pitch_(pitch_mm) {
    if (rows < 3 || cols < 3) throw InvalidArgument("Poisson solve needs at least 3x3 samples");
    if (!(pitch_mm > 0.0)) throw InvalidArgument("pitch must be positive");
    dst_r_ = std::make_unique<Dst1>(nr_);
    dst_c_ = std::make_unique<Dst1>(nc_);
    const double h2 = pitch_mm * pitch_mm;
    std::vector<double> er(nr_), ec(nc_);
    for (std::size_t k = 0; k < nr_; ++k) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(nr_ + 1)));
      er[k] = 4.0 * s * s / h2;
    }
    for (std::size_t k = 0; k < nc_; ++k) {
      const double s = std::sin(std::numbers::pi * static_cast<double>(k + 1) / (2.0 * static_cast<double>(nc_ + 1)));
      ec[k] = 4.0 * s * s / h2;
    }
    // Stored transposed ([col-mode][row-mode]) to match the spectral layout.
    // Folds in the inverse-DST normalisation 2/(n+1) per axis.
    const double norm = 4.0 / (static_cast<double>(nr_ + 1) * static_cast<double>(nc_ + 1));
    inv_eig_.resize(nr_ * nc_);
    for (std::size_t l = 0; l < nc_; ++l) {
      for (std::size_t k = 0; k < nr_; ++k) inv_eig_[l * nr_ + k] = -norm / (er[k] + ec[l]);
    }
  }

  [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
  [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
  [[nodiscard]] double pitch() const noexcept { return pitch_; }

  /// Solves L5 z = f on the interior; f's border values are ignored.
  [[nodiscard]] Array2D<double> solve(const Array2D<double>& f) const {
    if (f.rows() != rows_ || f.cols() != cols_) throw InvalidArgument("right-hand side has the wrong shape");
    a_.resize(nr_ * nc_);
    b_.resize(nr_ * nc_);
    for (std::size_t r = 0; r < nr_; ++r) {
      std::copy_n(&f(r + 1, 1), nc_, a_.data() + r * nc_);
    }
    dst_r_->apply(a_.data(), b_.data(), nc_);  // along rows axis, [r][c]
    transpose(b_.data(), a_.data(), nr_, nc_);  // -> [c][r]
    dst_c_->apply(a_.data(), b_.data(), nr_);
    for (std::size_t i = 0; i < b_.size(); ++i) b_[i] *= inv_eig_[i];
    dst_c_->apply(b_.data(), a_.data(), nr_);
    transpose(a_.data(), b_.data(), nc_, nr_);  // -> [r][c]
    dst_r_->apply(b_.data(), a_.data(), nc_);
    Array2D<double> z(rows_, cols_, 0.0);
    for (std::size_t r = 0; r < nr_; ++r) std::copy_n(a_.data() + r * nc_, nc_, &z(r + 1, 1));
    return z;
  }

 private:
  static void transpose(const double* in, double* out, std::size_t rows, std::size_t cols) {
    constexpr std::size_t B = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += B) {
      for (std::size_t c0 = 0; c0 < cols; c0 += B) {
        const std::size_t r1 = std::min(rows, r0 + B), c1 = std::min(cols, c0 + B);
        for (std::size_t r = r0; r < r1; ++r) {
          for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
        }
      }
    }
  }

  std::size_t rows_, cols_, nr_, nc_;
  double pitch_;
  std::unique_ptr<Dst1> dst_r_, dst_c_;
  std::vector<double> inv_eig_;
  mutable std::vector<double> a_, b_;
};

namespace detail {
inline const DirichletSolver& cached_solver(std::size_t rows, std::size_t cols, double pitch) {
  thread_local std::map<std::tuple<std::size_t, std::size_t, double>, std::unique_ptr<DirichletSolver>> cache;
  auto& slot = cache[{rows, cols, pitch}];
  if (!slot) {
    if (cache.size() > 16) {
      cache.clear();
      return *(cache[{rows, cols, pitch}] = std::make_unique<DirichletSolver>(rows, cols, pitch));
    }
    slot = std::make_unique<DirichletSolver>(rows, cols, pitch);
  }
  return *slot;
}
}  // namespace detail

/// Depth from a gradient map: L5 z = div(g) with z = 0 on the frame border.
/// The raw solution is returned (no clamping).
inline DepthMap integrate(const GradientMap& g, double pitch_mm) {
  if (g.rows() < 3 || g.cols() < 3) throw InvalidArgument("integration needs at least 3x3 samples");
  if (!same_shape(g.gx, g.gy)) throw InvalidArgument("gx and gy differ in shape");
  require_finite(g.gx, "gradient gx");
  require_finite(g.gy, "gradient gy");
  if (!std::isfinite(pitch_mm) || !(pitch_mm > 0.0)) throw InvalidArgument("pitch must be positive");
  const auto div = divergence(g, pitch_mm);
  return DepthMap{detail::cached_solver(g.rows(), g.cols(), pitch_mm).solve(div), pitch_mm, Units::mm};
}

}  // namespace tactile_cal::poisson
