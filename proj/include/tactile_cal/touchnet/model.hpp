#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/array2d.hpp"
#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/touchnet/layers.hpp"
#include "tactile_cal/touchnet/tensor.hpp"

namespace tactile_cal::net {

inline constexpr std::size_t kModules = 9;
inline constexpr std::size_t kInputChannels = 5;
inline constexpr std::size_t kOutputChannels = 2;
inline constexpr std::size_t kMaxWidth = 256;
/// Initial batch-norm scale of the output module. In train mode the output
/// spread per channel is exactly |gamma|; starting near the label scale of
/// contact slopes instead of 1 saves thousands of AdamW steps at lr 1e-4.
inline constexpr double kOutputGammaInit = 0.1;

struct TouchNetConfig {
  std::vector<std::size_t> module_channels{32, 64, 128, 256, 256, 128, 64, 32, 2};
  std::size_t kernel_size = 3;
  double dropout_p = 0.05;  // whole-channel; 0.1 underfits the desk widths
  std::size_t input_channels = kInputChannels;

  /// Narrower ramp used for CPU-scale training runs; same depth and shape.
  static TouchNetConfig desk() {
    TouchNetConfig c;
    c.module_channels = {16, 16, 32, 32, 32, 32, 16, 16, 2};
    return c;
  }

  void validate() const {
    if (module_channels.size() != kModules) {
      throw InvalidArgument("touchnet needs exactly 9 modules, got " + std::to_string(module_channels.size()));
    }
    if (module_channels.back() != kOutputChannels) throw InvalidArgument("last module must output 2 channels");
    for (auto w : module_channels) {
      if (w == 0 || w > kMaxWidth) throw InvalidArgument("module widths must lie in [1, 256]");
    }
    if (kernel_size == 0 || kernel_size % 2 == 0) throw InvalidArgument("kernel size must be odd");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw InvalidArgument("dropout_p must lie in [0, 1)");
    if (input_channels != kInputChannels) throw InvalidArgument("touchnet input is fixed at 5 channels");
  }

  bool operator==(const TouchNetConfig&) const = default;
};

/// conv -> batch norm -> (ReLU -> spatial dropout unless last).
template <class T>
struct Module {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  bool activation = true;

  bool operator==(const Module&) const = default;
};

template <class T>
struct Network {
  TouchNetConfig config;
  std::vector<Module<T>> modules;

  bool operator==(const Network&) const = default;
};

using TouchNetModel = Network<float>;

template <class T>
Network<T> make_network(const TouchNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network<T> net{cfg, {}};
  Rng rng(derive_seed(seed, 0x696e6974));
  std::size_t in = cfg.input_channels;
  for (std::size_t i = 0; i < kModules; ++i) {
    const std::size_t out = cfg.module_channels[i];
    Module<T> m{Conv2d<T>(in, out, cfg.kernel_size), BatchNorm2d<T>(out), i + 1 < kModules};
    const double sd = std::sqrt(2.0 / static_cast<double>(m.conv.fan_in()));
    for (auto& w : m.conv.weight) w = static_cast<T>(sd * rng.normal());
    if (!m.activation) std::fill(m.bn.gamma.begin(), m.bn.gamma.end(), static_cast<T>(kOutputGammaInit));
    net.modules.push_back(std::move(m));
    in = out;
  }
  return net;
}

inline TouchNetModel make_model(const TouchNetConfig& cfg = {}, std::uint64_t seed = 0) {
  return make_network<float>(cfg, seed);
}

template <class To, class From>
Network<To> cast_network(const Network<From>& src) {
  auto conv = [](const std::vector<From>& v) { return std::vector<To>(v.begin(), v.end()); };
  Network<To> out{src.config, {}};
  for (const auto& m : src.modules) {
    Module<To> t;
    t.conv.in = m.conv.in;
    t.conv.out = m.conv.out;
    t.conv.k = m.conv.k;
    t.conv.weight = conv(m.conv.weight);
    t.conv.bias = conv(m.conv.bias);
    t.bn.gamma = conv(m.bn.gamma);
    t.bn.beta = conv(m.bn.beta);
    t.bn.running_mean = conv(m.bn.running_mean);
    t.bn.running_var = conv(m.bn.running_var);
    t.activation = m.activation;
    out.modules.push_back(std::move(t));
  }
  return out;
}

/// Visits every tensor with a stable name. fn(name, values, decays) where
/// `decays` marks the tensors that receive weight decay (conv weights).
template <class Net, class Fn>
void for_each_parameter(Net& net, Fn&& fn) {
  for (std::size_t i = 0; i < net.modules.size(); ++i) {
    auto& m = net.modules[i];
    const std::string p = "m" + std::to_string(i) + ".";
    fn(p + "conv.weight", m.conv.weight, true);
    fn(p + "conv.bias", m.conv.bias, false);
    fn(p + "bn.gamma", m.bn.gamma, false);
    fn(p + "bn.beta", m.bn.beta, false);
  }
}

/// Trainable tensors plus the batch-norm running statistics.
template <class Net, class Fn>
void for_each_tensor(Net& net, Fn&& fn) {
  for (std::size_t i = 0; i < net.modules.size(); ++i) {
    auto& m = net.modules[i];
    const std::string p = "m" + std::to_string(i) + ".";
    fn(p + "conv.weight", m.conv.weight);
    fn(p + "conv.bias", m.conv.bias);
    fn(p + "bn.gamma", m.bn.gamma);
    fn(p + "bn.beta", m.bn.beta);
    fn(p + "bn.running_mean", m.bn.running_mean);
    fn(p + "bn.running_var", m.bn.running_var);
  }
}

/// Shape and value checks for a loaded or hand-built model.
template <class T>
void validate_network(const Network<T>& net) {
  net.config.validate();
  if (net.modules.size() != kModules) throw ValidationError("model must have 9 modules");
  std::size_t in = net.config.input_channels;
  for (std::size_t i = 0; i < kModules; ++i) {
    const auto& m = net.modules[i];
    const std::size_t out = net.config.module_channels[i], k = net.config.kernel_size;
    const std::string where = "module " + std::to_string(i);
    if (m.conv.in != in || m.conv.out != out || m.conv.k != k || m.conv.weight.size() != out * in * k * k ||
        m.conv.bias.size() != out || m.bn.gamma.size() != out || m.bn.beta.size() != out ||
        m.bn.running_mean.size() != out || m.bn.running_var.size() != out) {
      throw ValidationError(where + ": parameter shapes do not match the config");
    }
    if (m.activation != (i + 1 < kModules)) throw ValidationError(where + ": activation flag mismatch");
    for (auto v : m.bn.running_var) {
      if (!(v > 0)) throw ValidationError(where + ": running variance must be positive");
    }
    in = out;
  }
  for_each_tensor(net, [](const std::string& name, const std::vector<T>& v) {
    for (auto x : v) {
      if (!std::isfinite(static_cast<double>(x))) throw ValidationError(name + " is not finite");
    }
  });
}

/// Channel 0: x in [-1, 1] left to right; channel 1: y in [-1, 1] top to
/// bottom. A single row or column maps to -1.
inline std::array<Array2D<double>, 2> coordinate_embedding(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) throw InvalidArgument("embedding needs rows, cols >= 1");
  std::array<Array2D<double>, 2> e{Array2D<double>(rows, cols), Array2D<double>(rows, cols)};
  auto norm = [](std::size_t i, std::size_t n) {
    return n == 1 ? -1.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      e[0](r, c) = norm(c, cols);
      e[1](r, c) = norm(r, rows);
    }
  }
  return e;
}

/// Writes sample `s` of a 5-channel batch: RGB / 255 then the embedding of
/// the full frame, cropped to the window at (y0, x0).
template <class T>
void pack_input(const TactileImage& img, std::size_t y0, std::size_t x0, Tensor<T>& batch, std::size_t s) {
  const std::size_t H = batch.h, W = batch.w;
  if (y0 + H > img.rows || x0 + W > img.cols) throw InvalidArgument("input window exceeds the image");
  const double sx = img.cols > 1 ? 2.0 / static_cast<double>(img.cols - 1) : 0.0;
  const double sy = img.rows > 1 ? 2.0 / static_cast<double>(img.rows - 1) : 0.0;
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        batch.at(ch, s, y, x) = static_cast<T>(img.at(y0 + y, x0 + x, ch) / 255.0);
      }
      batch.at(3, s, y, x) = static_cast<T>(-1.0 + sx * static_cast<double>(x0 + x));
      batch.at(4, s, y, x) = static_cast<T>(-1.0 + sy * static_cast<double>(y0 + y));
    }
  }
}

template <class T>
Tensor<T> make_input(const TactileImage& img) {
  Tensor<T> t(kInputChannels, 1, img.rows, img.cols);
  pack_input(img, 0, 0, t, 0);
  return t;
}

template <class T>
void pack_label(const GradientMap& g, std::size_t y0, std::size_t x0, Tensor<T>& batch, std::size_t s) {
  for (std::size_t y = 0; y < batch.h; ++y) {
    for (std::size_t x = 0; x < batch.w; ++x) {
      batch.at(0, s, y, x) = static_cast<T>(g.gx(y0 + y, x0 + x));
      batch.at(1, s, y, x) = static_cast<T>(g.gy(y0 + y, x0 + x));
    }
  }
}

template <class T>
GradientMap to_gradient_map(const Tensor<T>& out, std::size_t s = 0) {
  GradientMap g(out.h, out.w);
  for (std::size_t y = 0; y < out.h; ++y) {
    for (std::size_t x = 0; x < out.w; ++x) {
      g.gx(y, x) = out.at(0, s, y, x);
      g.gy(y, x) = out.at(1, s, y, x);
    }
  }
  return g;
}

enum class Mode { train, eval };

/// Activations a backward pass needs. inputs[i] is the input of module i;
/// inputs[9] is the network output.
template <class T>
struct ForwardCache {
  std::vector<Tensor<T>> inputs;
  std::vector<BatchNormCache<T>> bn;
  std::vector<DropoutMask> masks;
};

template <class T>
struct Gradients {
  std::vector<ConvGrad<T>> conv;
  std::vector<BatchNormGrad<T>> bn;

  explicit Gradients(const Network<T>& net) {
    for (const auto& m : net.modules) {
      conv.push_back({std::vector<T>(m.conv.weight.size()), std::vector<T>(m.conv.bias.size())});
      bn.push_back({std::vector<T>(m.bn.gamma.size()), std::vector<T>(m.bn.beta.size())});
    }
  }

  void zero() {
    for (auto& c : conv) {
      std::fill(c.weight.begin(), c.weight.end(), T{});
      std::fill(c.bias.begin(), c.bias.end(), T{});
    }
    for (auto& b : bn) {
      std::fill(b.gamma.begin(), b.gamma.end(), T{});
      std::fill(b.beta.begin(), b.beta.end(), T{});
    }
  }

  /// Same order and names as for_each_parameter.
  template <class Fn>
  void for_each(Fn&& fn) {
    for (std::size_t i = 0; i < conv.size(); ++i) {
      fn(conv[i].weight);
      fn(conv[i].bias);
      fn(bn[i].gamma);
      fn(bn[i].beta);
    }
  }
};

namespace detail {

template <class T>
void check_finite(const Tensor<T>& t, std::size_t module) {
  for (auto v : t.v) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError("non-finite activation in module " + std::to_string(module));
    }
  }
}

template <class T>
struct Scratch {
  std::vector<T> col, dcol;
};

template <class T>
Scratch<T>& scratch() {
  thread_local Scratch<T> s;
  return s;
}

}  // namespace detail

/// Train-mode forward: batch statistics, dropout masks from `seed`, running
/// statistics updated. Fills `cache` for backward and returns the output.
template <class T>
const Tensor<T>& forward_train(Network<T>& net, const Tensor<T>& input, std::uint64_t seed, ForwardCache<T>& cache,
                               bool update_running = true) {
  if (input.c != net.config.input_channels) throw InvalidArgument("input must have 5 channels");
  const std::size_t k = net.config.kernel_size;
  if (input.h < k || input.w < k) throw InvalidArgument("input smaller than the kernel");
  auto& sc = detail::scratch<T>();
  cache.inputs.resize(net.modules.size() + 1);
  cache.bn.resize(net.modules.size());
  cache.masks.resize(net.modules.size());
  cache.inputs[0] = input;
  for (std::size_t i = 0; i < net.modules.size(); ++i) {
    auto& m = net.modules[i];
    Tensor<T>& y = cache.inputs[i + 1];
    conv_forward(m.conv, cache.inputs[i], y, sc.col);
    batchnorm_forward_train(m.bn, y, cache.bn[i], update_running);
    detail::check_finite(y, i);  // before ReLU, which would map NaN to 0
    if (m.activation) {
      relu_forward(y);
      cache.masks[i] = draw_dropout_mask(y.c, y.n, net.config.dropout_p, derive_seed(seed, i));
      dropout_apply(cache.masks[i], y);
    }
  }
  return cache.inputs.back();
}

/// Eval-mode forward: running statistics folded into the convolution, no
/// dropout, no state touched.
template <class T>
Tensor<T> forward_eval(const Network<T>& net, const Tensor<T>& input) {
  if (input.c != net.config.input_channels) throw InvalidArgument("input must have 5 channels");
  const std::size_t k = net.config.kernel_size;
  if (input.h < k || input.w < k) throw InvalidArgument("input smaller than the kernel");
  auto& sc = detail::scratch<T>();
  Tensor<T> a = input, b;
  for (std::size_t i = 0; i < net.modules.size(); ++i) {
    const auto& m = net.modules[i];
    Conv2d<T> folded = m.conv;
    const std::size_t K = m.conv.fan_in();
    for (std::size_t o = 0; o < m.conv.out; ++o) {
      const double s = m.bn.gamma[o] / std::sqrt(static_cast<double>(m.bn.running_var[o]) + kBatchNormEps);
      for (std::size_t j = 0; j < K; ++j) folded.weight[o * K + j] = static_cast<T>(m.conv.weight[o * K + j] * s);
      folded.bias[o] = static_cast<T>((m.conv.bias[o] - m.bn.running_mean[o]) * s + m.bn.beta[o]);
    }
    // bias, finiteness probe and ReLU in one pass over the hot tile
    unsigned bad = 0;
    const bool relu = m.activation;
    conv_forward(folded, a, b, sc.col, [&](T* row, std::size_t len, T bias) {
      unsigned acc = 0;
      constexpr T big = std::numeric_limits<T>::max();
      if (relu) {
        for (std::size_t j = 0; j < len; ++j) {
          const T v = row[j] + bias;
          acc |= !(std::abs(v) <= big);
          row[j] = v > T{} ? v : T{};
        }
      } else {
        for (std::size_t j = 0; j < len; ++j) {
          const T v = row[j] + bias;
          acc |= !(std::abs(v) <= big);
          row[j] = v;
        }
      }
      bad |= acc;
    });
    if (bad) throw NumericError("non-finite activation in module " + std::to_string(i));
    std::swap(a, b);
  }
  return a;
}

/// Backpropagates dL/d(output) (consumed) through the cached forward pass,
/// accumulating parameter gradients. Writes dL/d(input) if `dinput`.
template <class T>
void backward(const Network<T>& net, const ForwardCache<T>& cache, Tensor<T>& dout, Gradients<T>& g,
              Tensor<T>* dinput = nullptr) {
  auto& sc = detail::scratch<T>();
  Tensor<T> d = std::move(dout), dx;
  for (std::size_t i = net.modules.size(); i-- > 0;) {
    const auto& m = net.modules[i];
    if (m.activation) {
      dropout_apply(cache.masks[i], d);
      relu_backward(cache.inputs[i + 1], d);
    }
    batchnorm_backward(m.bn, cache.bn[i], d, g.bn[i]);
    const bool need_dx = i > 0 || dinput;
    conv_backward(m.conv, cache.inputs[i], d, g.conv[i], need_dx ? &dx : nullptr, sc.col, sc.dcol);
    if (need_dx) std::swap(d, dx);
  }
  if (dinput) *dinput = std::move(d);
}

/// Single-frame inference in eval mode.
template <class T>
GradientMap predict(const Network<T>& net, const TactileImage& img) {
  return to_gradient_map(forward_eval(net, make_input<T>(img)));
}

/// forward(model, image, mode, seed). Train mode uses batch statistics and
/// dropout on a copy, so the caller's model is left untouched.
template <class T>
GradientMap forward(const Network<T>& net, const TactileImage& img, Mode mode, std::uint64_t seed = 0) {
  if (mode == Mode::eval) return predict(net, img);
  Network<T> tmp = net;
  ForwardCache<T> cache;
  return to_gradient_map(forward_train(tmp, make_input<T>(img), seed, cache, false));
}

}  // namespace tactile_cal::net
