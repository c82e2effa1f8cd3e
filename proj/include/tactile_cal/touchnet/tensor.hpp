#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <vector>

#include "tactile_cal/core/error.hpp"

namespace tactile_cal::net {

/// Activations laid out channel-major over the batch: [C][N][H][W]. Each
/// channel is one contiguous row of N*H*W values, which is what both the
/// conv GEMM and the per-channel batch-norm reductions want.
template <class T>
struct Tensor {
  std::size_t c = 0, n = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::size_t c_, std::size_t n_, std::size_t h_, std::size_t w_, T fill = T{})
      : c(c_), n(n_), h(h_), w(w_), v(c_ * n_ * h_ * w_, fill) {}

  void reshape(std::size_t c_, std::size_t n_, std::size_t h_, std::size_t w_) {
    c = c_;
    n = n_;
    h = h_;
    w = w_;
    v.resize(c * n * h * w);
  }

  [[nodiscard]] std::size_t plane() const noexcept { return n * h * w; }
  [[nodiscard]] std::size_t size() const noexcept { return v.size(); }
  T* channel(std::size_t ch) noexcept { return v.data() + ch * plane(); }
  const T* channel(std::size_t ch) const noexcept { return v.data() + ch * plane(); }
  T& at(std::size_t ch, std::size_t s, std::size_t y, std::size_t x) noexcept {
    return v[((ch * n + s) * h + y) * w + x];
  }
  T at(std::size_t ch, std::size_t s, std::size_t y, std::size_t x) const noexcept {
    return v[((ch * n + s) * h + y) * w + x];
  }
  [[nodiscard]] bool same_shape(const Tensor& o) const noexcept {
    return c == o.c && n == o.n && h == o.h && w == o.w;
  }

  bool operator==(const Tensor&) const = default;
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Unfolds k x k same-padded patches of sample `s`, image rows [y0, y1):
/// row (ci*k + ky)*k + kx of the (C*k*k) x ((y1-y0)*W) result holds x[ci]
/// shifted by (ky - k/2, kx - k/2), zero outside the frame.
template <class T>
void im2col_rows(const Tensor<T>& x, std::size_t k, std::size_t s, std::size_t y0, std::size_t y1,
                 std::vector<T>& col) {
  const std::size_t H = x.h, W = x.w, cols = (y1 - y0) * W;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto Wp = static_cast<std::ptrdiff_t>(W);
  col.resize(x.c * k * k * cols);
  T* dst = col.data();
  for (std::size_t ci = 0; ci < x.c; ++ci) {
    const T* src = x.channel(ci) + s * H * W;
    for (std::size_t ky = 0; ky < k; ++ky) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
      for (std::size_t kx = 0; kx < k; ++kx, dst += cols) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto x0 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(-dx, 0, Wp));
        const auto x1 = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(Wp - dx, 0, Wp));
        for (std::size_t y = y0; y < y1; ++y) {
          T* row = dst + (y - y0) * W;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H) || x0 >= x1) {
            std::fill(row, row + W, T{});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * W;
          std::fill(row, row + x0, T{});
          std::memcpy(row + x0, srow + static_cast<std::ptrdiff_t>(x0) + dx, (x1 - x0) * sizeof(T));
          std::fill(row + x1, row + W, T{});
        }
      }
    }
  }
}

/// Rows per GEMM tile so a K-row patch matrix stays around 1 MB (L2-sized).
inline std::size_t tile_rows(std::size_t K, std::size_t W, std::size_t H) {
  constexpr std::size_t kTileFloats = std::size_t{1} << 18;
  return std::clamp<std::size_t>(kTileFloats / std::max<std::size_t>(1, K * W), 1, H);
}

}  // namespace tactile_cal::net
