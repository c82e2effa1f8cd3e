#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/touchnet/tensor.hpp"

namespace tactile_cal::net {

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Same-padded k x k convolution. weight is out x (in*k*k), row-major.
template <class T>
struct Conv2d {
  std::size_t in = 0, out = 0, k = 3;
  std::vector<T> weight;
  std::vector<T> bias;

  Conv2d() = default;
  Conv2d(std::size_t in_, std::size_t out_, std::size_t k_)
      : in(in_), out(out_), k(k_), weight(out_ * in_ * k_ * k_), bias(out_) {}

  [[nodiscard]] std::size_t fan_in() const noexcept { return in * k * k; }
  bool operator==(const Conv2d&) const = default;
};

template <class T>
struct BatchNorm2d {
  std::vector<T> gamma, beta, running_mean, running_var;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t c) : gamma(c, T(1)), beta(c), running_mean(c), running_var(c, T(1)) {}

  [[nodiscard]] std::size_t channels() const noexcept { return gamma.size(); }
  bool operator==(const BatchNorm2d&) const = default;
};

template <class T>
struct ConvGrad {
  std::vector<T> weight, bias;
};
template <class T>
struct BatchNormGrad {
  std::vector<T> gamma, beta;
};

/// Per-channel quantities kept from a train-mode batch-norm forward.
template <class T>
struct BatchNormCache {
  std::vector<T> xhat;     // normalized input, same layout as the activations
  std::vector<T> inv_std;  // per channel
};

template <class T>
using TileMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstTileMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

/// Calls fn(sample, y0, y1) over row tiles sized for a K-row patch matrix.
template <class Fn>
void for_each_tile(std::size_t n, std::size_t h, std::size_t w, std::size_t K, Fn&& fn) {
  const std::size_t tr = tile_rows(K, w, h);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t y0 = 0; y0 < h; y0 += tr) fn(s, y0, std::min(h, y0 + tr));
  }
}

/// Adds the bias to an output row segment of one channel.
struct BiasOnly {
  template <class T>
  void operator()(T* row, std::size_t len, T bias) const {
    for (std::size_t i = 0; i < len; ++i) row[i] += bias;
  }
};

/// conv then `epilogue(row, len, bias)` on each output tile while it is hot.
template <class T, class Epilogue = BiasOnly>
void conv_forward(const Conv2d<T>& conv, const Tensor<T>& x, Tensor<T>& y, std::vector<T>& col,
                  Epilogue&& epilogue = {}) {
  if (x.c != conv.in) throw InvalidArgument("conv input has " + std::to_string(x.c) + " channels, expected " +
                                            std::to_string(conv.in));
  const std::size_t M = x.plane(), K = conv.fan_in();
  y.reshape(conv.out, x.n, x.h, x.w);
  const auto Oi = static_cast<Eigen::Index>(conv.out), Ki = static_cast<Eigen::Index>(K);
  ConstMatMap<T> Wm(conv.weight.data(), Oi, Ki);
  for_each_tile(x.n, x.h, x.w, K, [&](std::size_t s, std::size_t y0, std::size_t y1) {
    im2col_rows(x, conv.k, s, y0, y1, col);
    const std::size_t len = (y1 - y0) * x.w;
    const auto cols = static_cast<Eigen::Index>(len);
    ConstMatMap<T> C(col.data(), Ki, cols);
    T* base = y.v.data() + (s * x.h + y0) * x.w;
    TileMap<T> Y(base, Oi, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(M)));
    Y.noalias() = Wm * C;
    for (std::size_t o = 0; o < conv.out; ++o) epilogue(base + o * M, len, conv.bias[o]);
  });
}

/// Accumulates weight/bias gradients into `g`; writes dx when requested.
/// dx is the same-padded convolution of dy with the spatially flipped,
/// in/out-transposed kernel. `col` and `dcol` are scratch buffers.
template <class T>
void conv_backward(const Conv2d<T>& conv, const Tensor<T>& x, const Tensor<T>& dy, ConvGrad<T>& g,
                   Tensor<T>* dx, std::vector<T>& col, std::vector<T>& dcol) {
  const std::size_t M = x.plane(), K = conv.fan_in(), k = conv.k;
  const auto Oi = static_cast<Eigen::Index>(conv.out), Ki = static_cast<Eigen::Index>(K);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(M));
  MatMap<T> dW(g.weight.data(), Oi, Ki);
  for_each_tile(x.n, x.h, x.w, K, [&](std::size_t s, std::size_t y0, std::size_t y1) {
    im2col_rows(x, k, s, y0, y1, col);
    const auto cols = static_cast<Eigen::Index>((y1 - y0) * x.w);
    ConstMatMap<T> C(col.data(), Ki, cols);
    ConstTileMap<T> D(dy.v.data() + (s * x.h + y0) * x.w, Oi, cols, stride);
    dW.noalias() += D * C.transpose();
  });
  for (std::size_t o = 0; o < conv.out; ++o) {
    const T* d = dy.channel(o);
    double sum = 0.0;
    for (std::size_t i = 0; i < M; ++i) sum += d[i];
    g.bias[o] += static_cast<T>(sum);
  }
  if (!dx) return;
  const std::size_t KT = conv.out * k * k;
  std::vector<T> flipped(conv.in * KT);
  for (std::size_t co = 0; co < conv.out; ++co) {
    for (std::size_t ci = 0; ci < conv.in; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          flipped[ci * KT + (co * k + ky) * k + kx] = conv.weight[co * K + (ci * k + (k - 1 - ky)) * k + (k - 1 - kx)];
        }
      }
    }
  }
  const auto Ii = static_cast<Eigen::Index>(conv.in), KTi = static_cast<Eigen::Index>(KT);
  ConstMatMap<T> Wf(flipped.data(), Ii, KTi);
  dx->reshape(conv.in, x.n, x.h, x.w);
  for_each_tile(x.n, x.h, x.w, KT, [&](std::size_t s, std::size_t y0, std::size_t y1) {
    im2col_rows(dy, k, s, y0, y1, dcol);
    const auto cols = static_cast<Eigen::Index>((y1 - y0) * x.w);
    ConstMatMap<T> Dc(dcol.data(), KTi, cols);
    TileMap<T> DX(dx->v.data() + (s * x.h + y0) * x.w, Ii, cols, stride);
    DX.noalias() = Wf * Dc;
  });
}

/// Train-mode batch norm, in place on `z`. Batch statistics are reduced in
/// double; running statistics are updated only when `update_running`.
template <class T>
void batchnorm_forward_train(BatchNorm2d<T>& bn, Tensor<T>& z, BatchNormCache<T>& cache, bool update_running) {
  const std::size_t M = z.plane();
  if (z.c != bn.channels()) throw InvalidArgument("batch-norm channel mismatch");
  cache.xhat.resize(z.size());
  cache.inv_std.resize(z.c);
  for (std::size_t ch = 0; ch < z.c; ++ch) {
    T* p = z.channel(ch);
    double sum = 0.0;
    for (std::size_t i = 0; i < M; ++i) sum += p[i];
    const double mean = sum / static_cast<double>(M);
    double ss = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      const double d = p[i] - mean;
      ss += d * d;
    }
    const double var = ss / static_cast<double>(M);
    const double inv = 1.0 / std::sqrt(var + kBatchNormEps);
    cache.inv_std[ch] = static_cast<T>(inv);
    T* xh = cache.xhat.data() + ch * M;
    const T g = bn.gamma[ch], b = bn.beta[ch], m = static_cast<T>(mean), is = static_cast<T>(inv);
    for (std::size_t i = 0; i < M; ++i) {
      xh[i] = (p[i] - m) * is;
      p[i] = g * xh[i] + b;
    }
    if (update_running) {
      const double unbiased = M > 1 ? ss / static_cast<double>(M - 1) : var;
      bn.running_mean[ch] =
          static_cast<T>((1.0 - kBatchNormMomentum) * bn.running_mean[ch] + kBatchNormMomentum * mean);
      bn.running_var[ch] =
          static_cast<T>((1.0 - kBatchNormMomentum) * bn.running_var[ch] + kBatchNormMomentum * unbiased);
    }
  }
}

template <class T>
void batchnorm_forward_eval(const BatchNorm2d<T>& bn, Tensor<T>& z) {
  const std::size_t M = z.plane();
  for (std::size_t ch = 0; ch < z.c; ++ch) {
    const double s = bn.gamma[ch] / std::sqrt(static_cast<double>(bn.running_var[ch]) + kBatchNormEps);
    const auto scale = static_cast<T>(s);
    const auto shift = static_cast<T>(bn.beta[ch] - s * bn.running_mean[ch]);
    T* p = z.channel(ch);
    for (std::size_t i = 0; i < M; ++i) p[i] = p[i] * scale + shift;
  }
}

/// In place: d <- dL/dz given d = dL/dy.
template <class T>
void batchnorm_backward(const BatchNorm2d<T>& bn, const BatchNormCache<T>& cache, Tensor<T>& d,
                        BatchNormGrad<T>& g) {
  const std::size_t M = d.plane();
  const double Md = static_cast<double>(M);
  for (std::size_t ch = 0; ch < d.c; ++ch) {
    T* p = d.channel(ch);
    const T* xh = cache.xhat.data() + ch * M;
    double sd = 0.0, sdx = 0.0;
    for (std::size_t i = 0; i < M; ++i) {
      sd += p[i];
      sdx += static_cast<double>(p[i]) * xh[i];
    }
    g.gamma[ch] += static_cast<T>(sdx);
    g.beta[ch] += static_cast<T>(sd);
    const T k = static_cast<T>(bn.gamma[ch] * cache.inv_std[ch] / Md);
    const T a = static_cast<T>(sd), b = static_cast<T>(sdx);
    const T Mt = static_cast<T>(Md);
    for (std::size_t i = 0; i < M; ++i) p[i] = k * (Mt * p[i] - a - xh[i] * b);
  }
}

template <class T>
void relu_forward(Tensor<T>& y) {
  for (auto& v : y.v) v = v > T{} ? v : T{};
}

/// Uses the forward output: the gradient passes where it is positive.
template <class T>
void relu_backward(const Tensor<T>& out, Tensor<T>& d) {
  for (std::size_t i = 0; i < d.v.size(); ++i) {
    if (!(out.v[i] > T{})) d.v[i] = T{};
  }
}

/// One keep flag per (sample, channel): whole feature maps are dropped.
struct DropoutMask {
  std::size_t channels = 0, samples = 0;
  double p = 0.0;
  std::vector<std::uint8_t> keep;  // [channel][sample]

  [[nodiscard]] double scale() const noexcept { return p > 0.0 ? 1.0 / (1.0 - p) : 1.0; }
  [[nodiscard]] bool kept(std::size_t ch, std::size_t s) const noexcept { return keep[ch * samples + s] != 0; }
};

/// Draws sample-major, channel-minor so a sample's mask does not depend on
/// how many samples follow it.
inline DropoutMask draw_dropout_mask(std::size_t channels, std::size_t samples, double p, std::uint64_t seed) {
  DropoutMask m{channels, samples, p, std::vector<std::uint8_t>(channels * samples, 1)};
  if (p <= 0.0) return m;
  Rng rng(seed);
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t ch = 0; ch < channels; ++ch) m.keep[ch * samples + s] = rng.uniform() >= p ? 1 : 0;
  }
  return m;
}

template <class T>
void dropout_apply(const DropoutMask& m, Tensor<T>& t) {
  const std::size_t hw = t.h * t.w;
  const T sc = static_cast<T>(m.scale());
  for (std::size_t ch = 0; ch < t.c; ++ch) {
    for (std::size_t s = 0; s < t.n; ++s) {
      T* p = t.channel(ch) + s * hw;
      const T f = m.kept(ch, s) ? sc : T{};
      for (std::size_t i = 0; i < hw; ++i) p[i] *= f;
    }
  }
}

}  // namespace tactile_cal::net
