#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/dataset.hpp"
#include "tactile_cal/probe_plan.hpp"
#include "tactile_cal/touchnet/model.hpp"

namespace tactile_cal::net {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay, applied to conv weights only.
template <class T>
class AdamW {
 public:
  AdamW(const Network<T>& net, AdamWConfig cfg) : cfg_(cfg) {
    for_each_parameter(net, [&](const std::string&, const std::vector<T>& p, bool decays) {
      m_.emplace_back(p.size());
      v_.emplace_back(p.size());
      decays_.push_back(decays);
    });
  }

  void step(Network<T>& net, Gradients<T>& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::vector<std::vector<T>*> grads;
    g.for_each([&](std::vector<T>& v) { grads.push_back(&v); });
    std::size_t idx = 0;
    for_each_parameter(net, [&](const std::string&, std::vector<T>& p, bool) {
      const auto& gr = *grads[idx];
      auto& m = m_[idx];
      auto& v = v_[idx];
      const double decay = decays_[idx] ? cfg_.learning_rate * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = gr[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        double pi = p[i];
        if (decay != 0.0) pi -= decay * pi;
        pi -= cfg_.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
        p[i] = static_cast<T>(pi);
      }
      ++idx;
    });
  }

  [[nodiscard]] std::size_t steps() const noexcept { return t_; }

 private:
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_, v_;
  std::vector<bool> decays_;
  std::size_t t_ = 0;
};

struct EpochReport {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double val_mse = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 60;
  std::uint64_t seed = 0;
  /// Square training windows cut at random from each frame; 0 trains on
  /// whole frames. Validation always runs on whole frames.
  std::size_t crop_size = 0;
  /// Validate after every n-th epoch and after the last one.
  std::size_t val_interval = 1;
  std::function<void(const EpochReport&)> on_epoch;

  void validate() const {
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be non-negative");
    if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
    if (epochs == 0) throw InvalidArgument("epochs must be positive");
    if (val_interval == 0) throw InvalidArgument("val_interval must be positive");
  }
};

/// Per-epoch losses. Epochs that were not validated hold NaN in val_mse.
struct LossHistory {
  std::vector<double> train_mse;
  std::vector<double> val_mse;
};

struct TrainResult {
  TouchNetModel model;
  LossHistory history;
};

/// A frame and its label; both must outlive the training call.
struct LabeledFrame {
  const TactileImage* image = nullptr;
  const GradientMap* label = nullptr;
};

/// N = round(base * 0.80 / P): equal gradient-step budgets across fractions.
inline std::size_t epochs_for_fraction(double fraction_P, std::size_t base_epochs = 60) {
  if (!(fraction_P > 0.0) || fraction_P > plan::kMaxTrainFraction + 1e-12) {
    throw InvalidArgument("fraction_P must lie in (0, 0.80]");
  }
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(base_epochs) * plan::kMaxTrainFraction / fraction_P));
}

namespace detail {

inline void check_frames(std::span<const LabeledFrame> frames, std::size_t& rows, std::size_t& cols) {
  for (const auto& f : frames) {
    if (!f.image || !f.label) throw InvalidArgument("null training frame");
    if (rows == 0) {
      rows = f.image->rows;
      cols = f.image->cols;
    }
    if (f.image->rows != rows || f.image->cols != cols || f.label->rows() != rows || f.label->cols() != cols) {
      throw InvalidArgument("training frames and labels must share one resolution");
    }
  }
}

/// Mean squared error of a batch; writes dL/d(out) into `grad`.
inline double mse_and_grad(const Tensor<float>& out, const Tensor<float>& label, Tensor<float>& grad) {
  grad.reshape(out.c, out.n, out.h, out.w);
  const double inv = 1.0 / static_cast<double>(out.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = static_cast<double>(out.v[i]) - label.v[i];
    sum += d * d;
    grad.v[i] = static_cast<float>(2.0 * d * inv);
  }
  return sum * inv;
}

}  // namespace detail

/// Mean over frames of the per-frame gradient MSE, eval mode, whole frames.
inline double evaluate_mse(const TouchNetModel& model, std::span<const LabeledFrame> frames,
                           std::size_t batch = 16) {
  if (frames.empty()) throw InvalidArgument("no frames to evaluate");
  std::size_t rows = 0, cols = 0;
  detail::check_frames(frames, rows, cols);
  double total = 0.0;
  Tensor<float> input;
  for (std::size_t start = 0; start < frames.size(); start += batch) {
    const std::size_t nb = std::min(batch, frames.size() - start);
    input.reshape(kInputChannels, nb, rows, cols);
    for (std::size_t j = 0; j < nb; ++j) pack_input(*frames[start + j].image, 0, 0, input, j);
    const auto out = forward_eval(model, input);
    for (std::size_t j = 0; j < nb; ++j) {
      const auto& lab = *frames[start + j].label;
      double s = 0.0;
      for (std::size_t y = 0; y < rows; ++y) {
        for (std::size_t x = 0; x < cols; ++x) {
          const double dx = out.at(0, j, y, x) - lab.gx(y, x);
          const double dy = out.at(1, j, y, x) - lab.gy(y, x);
          s += dx * dx + dy * dy;
        }
      }
      total += s / static_cast<double>(2 * rows * cols);
    }
  }
  return total / static_cast<double>(frames.size());
}

/// Mini-batch AdamW on MSE. Deterministic for a given seed: the epoch order,
/// crop windows and dropout masks all come from streams derived from it.
inline TrainResult fit(TouchNetModel model, std::span<const LabeledFrame> train_frames,
                       std::span<const LabeledFrame> val_frames, const TrainConfig& cfg) {
  cfg.validate();
  validate_network(model);
  if (train_frames.empty()) throw InvalidArgument("no training frames");
  std::size_t rows = 0, cols = 0;
  detail::check_frames(train_frames, rows, cols);
  const std::size_t ch = cfg.crop_size ? std::min(cfg.crop_size, rows) : rows;
  const std::size_t cw = cfg.crop_size ? std::min(cfg.crop_size, cols) : cols;
  if (ch < model.config.kernel_size || cw < model.config.kernel_size) {
    throw InvalidArgument("training window smaller than the kernel");
  }

  AdamW<float> opt(model, {cfg.learning_rate, cfg.weight_decay});
  Gradients<float> grads(model);
  ForwardCache<float> cache;
  Tensor<float> input, label, dout;
  TrainResult res;
  std::vector<std::size_t> order(train_frames.size());

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(cfg.seed, 0x65706f6368, epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0, b = 0; start < order.size(); start += cfg.batch_size, ++b) {
        const std::size_t nb = std::min(cfg.batch_size, order.size() - start);
        input.reshape(kInputChannels, nb, ch, cw);
        label.reshape(kOutputChannels, nb, ch, cw);
        for (std::size_t j = 0; j < nb; ++j) {
          const auto& f = train_frames[order[start + j]];
          const std::size_t y0 = ch < rows ? rng.index(rows - ch + 1) : 0;
          const std::size_t x0 = cw < cols ? rng.index(cols - cw + 1) : 0;
          pack_input(*f.image, y0, x0, input, j);
          pack_label(*f.label, y0, x0, label, j);
        }
        const auto& out = forward_train(model, input, derive_seed(cfg.seed, epoch, b), cache);
        const double loss = detail::mse_and_grad(out, label, dout);
        if (!std::isfinite(loss)) throw TrainingError(epoch, "training loss diverged");
        loss_sum += loss * static_cast<double>(nb);
        grads.zero();
        backward(model, cache, dout, grads);
        opt.step(model, grads);
      }
    } catch (const NumericError& e) {
      throw TrainingError(epoch, e.what());
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.train_mse = loss_sum / static_cast<double>(order.size());
    const bool validate_now = (epoch + 1) % cfg.val_interval == 0 || epoch + 1 == cfg.epochs;
    if (validate_now && !val_frames.empty()) {
      try {
        rep.val_mse = evaluate_mse(model, val_frames);
      } catch (const NumericError& e) {
        throw TrainingError(epoch, e.what());
      }
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.history.train_mse.push_back(rep.train_mse);
    res.history.val_mse.push_back(rep.val_mse);
    if (cfg.on_epoch) cfg.on_epoch(rep);
  }
  res.model = std::move(model);
  return res;
}

/// Frames of the given plan coordinates.
inline std::vector<LabeledFrame> frames_of(const data::Dataset& ds, std::span<const std::size_t> plan_indices) {
  std::vector<bool> want;
  for (auto i : plan_indices) {
    if (i >= want.size()) want.resize(i + 1, false);
    want[i] = true;
  }
  std::vector<LabeledFrame> out;
  for (const auto& s : ds.samples) {
    if (s.plan_index < want.size() && want[s.plan_index]) out.push_back({&s.image, &s.label});
  }
  return out;
}

/// train(model, dataset, split, config): trains on the split's training
/// coordinates and validates on its holdout.
inline TrainResult train(TouchNetModel model, const data::Dataset& ds, const plan::PlanSplit& split,
                         const TrainConfig& cfg) {
  const auto tr = frames_of(ds, split.train_indices);
  if (tr.empty()) throw InvalidArgument("dataset has no samples on the training coordinates");
  const auto va = frames_of(ds, split.val_indices);
  return fit(std::move(model), tr, va, cfg);
}

}  // namespace tactile_cal::net
