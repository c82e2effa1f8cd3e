#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <variant>
#include <vector>

#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/touchnet/layers.hpp"
#include "tactile_cal/touchnet/model.hpp"

namespace tactile_cal::net {

struct ReluLayer {};
struct DropoutLayer {
  DropoutMask mask;
};

/// A short stack of layers in double precision. Batch norm runs in train
/// mode (batch statistics) without touching its running statistics.
using SliceLayer = std::variant<Conv2d<double>, BatchNorm2d<double>, ReluLayer, DropoutLayer>;
using Slice = std::vector<SliceLayer>;

/// Slice view of modules [first, last) of a network. Dropout masks are drawn
/// once from `seed` for a batch of `samples`, then frozen.
inline Slice slice_of(const Network<double>& net, std::size_t first, std::size_t last, std::size_t samples,
                      std::uint64_t seed) {
  Slice s;
  for (std::size_t i = first; i < last; ++i) {
    const auto& m = net.modules[i];
    s.emplace_back(m.conv);
    s.emplace_back(m.bn);
    if (m.activation) {
      s.emplace_back(ReluLayer{});
      s.emplace_back(DropoutLayer{draw_dropout_mask(m.conv.out, samples, net.config.dropout_p, derive_seed(seed, i))});
    }
  }
  return s;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  double param_rel_error = 0.0;
  double input_rel_error = 0.0;
  std::size_t checked = 0;
  /// Smallest |value| entering a ReLU; finite differences are only valid
  /// when this is well above epsilon.
  double relu_margin = std::numeric_limits<double>::infinity();
};

namespace detail {

struct SliceRun {
  std::vector<Tensor<double>> acts;
  std::vector<BatchNormCache<double>> bn;
  double relu_margin = std::numeric_limits<double>::infinity();
};

inline void slice_forward(Slice& s, const Tensor<double>& x, SliceRun& run) {
  std::vector<double> col;
  run.acts.assign(1, x);
  run.bn.assign(s.size(), {});
  for (std::size_t i = 0; i < s.size(); ++i) {
    Tensor<double> y;
    std::visit(
        [&](auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Conv2d<double>>) {
            conv_forward(layer, run.acts[i], y, col);
          } else if constexpr (std::is_same_v<L, BatchNorm2d<double>>) {
            y = run.acts[i];
            batchnorm_forward_train(layer, y, run.bn[i], false);
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            y = run.acts[i];
            for (double v : y.v) run.relu_margin = std::min(run.relu_margin, std::abs(v));
            relu_forward(y);
          } else {
            y = run.acts[i];
            dropout_apply(layer.mask, y);
          }
        },
        s[i]);
    run.acts.push_back(std::move(y));
  }
}

/// Gradient buffers laid out like the slice's parameters.
inline std::vector<std::vector<double>> slice_backward(const Slice& s, const SliceRun& run, Tensor<double> d,
                                                       Tensor<double>& dinput) {
  std::vector<std::vector<double>> grads;
  std::vector<std::vector<std::vector<double>>> per_layer(s.size());
  std::vector<double> col, dcol;
  for (std::size_t i = s.size(); i-- > 0;) {
    std::visit(
        [&](const auto& layer) {
          using L = std::decay_t<decltype(layer)>;
          if constexpr (std::is_same_v<L, Conv2d<double>>) {
            ConvGrad<double> g{std::vector<double>(layer.weight.size()), std::vector<double>(layer.bias.size())};
            Tensor<double> dx;
            conv_backward(layer, run.acts[i], d, g, &dx, col, dcol);
            d = std::move(dx);
            per_layer[i] = {std::move(g.weight), std::move(g.bias)};
          } else if constexpr (std::is_same_v<L, BatchNorm2d<double>>) {
            BatchNormGrad<double> g{std::vector<double>(layer.gamma.size()), std::vector<double>(layer.beta.size())};
            batchnorm_backward(layer, run.bn[i], d, g);
            per_layer[i] = {std::move(g.gamma), std::move(g.beta)};
          } else if constexpr (std::is_same_v<L, ReluLayer>) {
            relu_backward(run.acts[i + 1], d);
          } else {
            dropout_apply(layer.mask, d);
          }
        },
        s[i]);
  }
  for (auto& l : per_layer) {
    for (auto& g : l) grads.push_back(std::move(g));
  }
  dinput = std::move(d);
  return grads;
}

/// Pointers to the slice's trainable tensors in slice_backward's order.
inline std::vector<std::vector<double>*> slice_params(Slice& s) {
  std::vector<std::vector<double>*> out;
  for (auto& layer : s) {
    if (auto* c = std::get_if<Conv2d<double>>(&layer)) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    } else if (auto* b = std::get_if<BatchNorm2d<double>>(&layer)) {
      out.push_back(&b->gamma);
      out.push_back(&b->beta);
    }
  }
  return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Relative error with the denominator floored at 1e-6 of the largest
/// gradient, so entries that are analytically zero are judged on absolute
/// scale instead of blowing up.
struct ErrorTally {
  std::vector<double> analytic, numeric;
  std::vector<bool> is_param;

  void add(double a, double n, bool param) {
    analytic.push_back(a);
    numeric.push_back(n);
    is_param.push_back(param);
  }

  void finish(GradCheckResult& r) const {
    double scale = 0.0;
    for (double a : analytic) scale = std::max(scale, std::abs(a));
    const double floor = std::max(1e-6 * scale, std::numeric_limits<double>::min());
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double den = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
      const double e = std::abs(analytic[i] - numeric[i]) / den;
      double& slot = is_param[i] ? r.param_rel_error : r.input_rel_error;
      slot = std::max(slot, e);
      r.max_rel_error = std::max(r.max_rel_error, e);
    }
    r.checked = analytic.size();
  }
};

}  // namespace detail

/// Compares reverse-mode gradients of L = sum(r * slice(x)), r a fixed random
/// tensor, with central differences of step `epsilon` for every parameter and
/// input element.
inline GradCheckResult grad_check(Slice slice, const Tensor<double>& input, double epsilon = 1e-6,
                                  std::uint64_t seed = 1) {
  detail::SliceRun run;
  detail::slice_forward(slice, input, run);
  std::vector<double> r(run.acts.back().size());
  Rng rng(seed);
  for (auto& v : r) v = rng.normal();
  auto loss = [&](const Tensor<double>& x) {
    detail::SliceRun tmp;
    detail::slice_forward(slice, x, tmp);
    return detail::dot(tmp.acts.back().v, r);
  };
  Tensor<double> dout = run.acts.back();
  dout.v = r;
  Tensor<double> dinput;
  const auto grads = detail::slice_backward(slice, run, dout, dinput);

  detail::ErrorTally tally;
  const auto params = detail::slice_params(slice);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& p = *params[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + epsilon;
      const double lp = loss(input);
      p[i] = keep - epsilon;
      const double lm = loss(input);
      p[i] = keep;
      tally.add(grads[t][i], (lp - lm) / (2.0 * epsilon), true);
    }
  }
  Tensor<double> x = input;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double keep = x.v[i];
    x.v[i] = keep + epsilon;
    const double lp = loss(x);
    x.v[i] = keep - epsilon;
    const double lm = loss(x);
    x.v[i] = keep;
    tally.add(dinput.v[i], (lp - lm) / (2.0 * epsilon), false);
  }
  GradCheckResult res;
  res.relu_margin = run.relu_margin;
  tally.finish(res);
  return res;
}

/// Same check through the network's own forward_train/backward path.
inline GradCheckResult grad_check(const Network<double>& net, const Tensor<double>& input, double epsilon = 1e-6,
                                  std::uint64_t seed = 1) {
  Network<double> work = net;
  ForwardCache<double> cache;
  const std::uint64_t drop_seed = derive_seed(seed, 0x64726f70);
  const Tensor<double> out = forward_train(work, input, drop_seed, cache, false);
  std::vector<double> r(out.size());
  Rng rng(seed);
  for (auto& v : r) v = rng.normal();
  auto loss = [&](const Tensor<double>& x) {
    ForwardCache<double> c;
    return detail::dot(forward_train(work, x, drop_seed, c, false).v, r);
  };
  GradCheckResult res;
  for (std::size_t i = 0; i + 1 < cache.inputs.size(); ++i) {
    if (!work.modules[i].activation) continue;
    // pre-ReLU values are not cached; recover them from the batch-norm output
    Tensor<double> z;
    std::vector<double> col;
    conv_forward(work.modules[i].conv, cache.inputs[i], z, col);
    BatchNorm2d<double> bn = work.modules[i].bn;
    BatchNormCache<double> bc;
    batchnorm_forward_train(bn, z, bc, false);
    for (double v : z.v) res.relu_margin = std::min(res.relu_margin, std::abs(v));
  }
  Tensor<double> dout = out;
  dout.v = r;
  Gradients<double> g(work);
  Tensor<double> dinput;
  backward(work, cache, dout, g, &dinput);

  detail::ErrorTally tally;
  std::vector<std::vector<double>*> grads;
  g.for_each([&](std::vector<double>& v) { grads.push_back(&v); });
  std::size_t t = 0;
  for_each_parameter(work, [&](const std::string&, std::vector<double>& p, bool) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double keep = p[i];
      p[i] = keep + epsilon;
      const double lp = loss(input);
      p[i] = keep - epsilon;
      const double lm = loss(input);
      p[i] = keep;
      tally.add((*grads[t])[i], (lp - lm) / (2.0 * epsilon), true);
    }
    ++t;
  });
  Tensor<double> x = input;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const double keep = x.v[i];
    x.v[i] = keep + epsilon;
    const double lp = loss(x);
    x.v[i] = keep - epsilon;
    const double lm = loss(x);
    x.v[i] = keep;
    tally.add(dinput.v[i], (lp - lm) / (2.0 * epsilon), false);
  }
  tally.finish(res);
  return res;
}

}  // namespace tactile_cal::net
