#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/parallel.hpp"
#include "tactile_cal/dataset.hpp"
#include "tactile_cal/eval/stats.hpp"
#include "tactile_cal/probe_plan.hpp"
#include "tactile_cal/touchnet.hpp"

namespace tactile_cal::eval {

/// Per-coordinate validation MSE with its summaries.
struct MseDistribution {
  std::vector<std::size_t> plan_indices;  // coordinates kept after the FOV filter
  std::vector<plan::ProbePoint> points;
  std::vector<double> values;
  std::size_t excluded_outside_fov = 0;
  double mean = 0.0;
  double sigma = 0.0;  // sample standard deviation
  KdeCurve kde;
  Histogram hist;
};

/// Mean over 2 H W of the squared gradient error of one frame.
inline double frame_mse(const GradientMap& pred, const GradientMap& label) {
  if (pred.rows() != label.rows() || pred.cols() != label.cols()) throw InvalidArgument("prediction/label size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.gx.size(); ++i) {
    const double dx = pred.gx.values()[i] - label.gx.values()[i];
    const double dy = pred.gy.values()[i] - label.gy.values()[i];
    s += dx * dx + dy * dy;
  }
  return s / static_cast<double>(2 * pred.gx.size());
}

/// Batch predictor: one gradient map per sample, same order.
using Predictor = std::function<std::vector<GradientMap>(std::span<const data::Sample* const>)>;

inline Predictor model_predictor(const net::TouchNetModel& model) {
  return [&model](std::span<const data::Sample* const> batch) {
    std::vector<GradientMap> out;
    if (batch.empty()) return out;
    const auto& first = batch.front()->image;
    net::Tensor<float> input(net::kInputChannels, batch.size(), first.rows, first.cols);
    for (std::size_t j = 0; j < batch.size(); ++j) net::pack_input(batch[j]->image, 0, 0, input, j);
    const auto y = net::forward_eval(model, input);
    for (std::size_t j = 0; j < batch.size(); ++j) out.push_back(net::to_gradient_map(y, j));
    return out;
  };
}

inline MseDistribution summarize(MseDistribution d) {
  if (d.values.empty()) throw InvalidArgument("no coordinates left to summarize");
  d.mean = mean_of(d.values);
  d.sigma = stddev_of(d.values);
  d.kde = gaussian_kde(d.values);
  d.hist = histogram(d.values);
  return d;
}

/// For every validation coordinate whose probe centre lies in the camera
/// field of view (when `fov_filter`), the mean frame MSE over its frames.
inline MseDistribution per_coordinate_mse(const Predictor& predict, const data::Dataset& ds,
                                          std::span<const std::size_t> val_indices, bool fov_filter = true) {
  if (val_indices.empty()) throw InvalidArgument("empty validation set");
  MseDistribution d;
  std::vector<std::size_t> idx(val_indices.begin(), val_indices.end());
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  // Samples are stored ordered by plan index, so each coordinate is a run.
  auto it = ds.samples.begin();
  for (const std::size_t pi : idx) {
    if (pi >= ds.plan.size()) throw InvalidArgument("validation index out of range");
    const auto& p = ds.plan.points[pi];
    if (fov_filter && !ds.geometry.in_fov(p.x_mm, p.y_mm)) {
      ++d.excluded_outside_fov;
      continue;
    }
    it = std::lower_bound(it, ds.samples.end(), pi,
                          [](const data::Sample& s, std::size_t v) { return s.plan_index < v; });
    std::vector<const data::Sample*> frames;
    for (auto j = it; j != ds.samples.end() && j->plan_index == pi; ++j) frames.push_back(&*j);
    if (frames.empty()) throw InvalidArgument("validation coordinate " + std::to_string(pi) + " has no samples");
    const auto preds = predict(frames);
    double s = 0.0;
    for (std::size_t k = 0; k < frames.size(); ++k) s += frame_mse(preds[k], frames[k]->label);
    d.plan_indices.push_back(pi);
    d.points.push_back(p);
    d.values.push_back(s / static_cast<double>(frames.size()));
  }
  if (d.values.empty()) throw InvalidArgument("no validation coordinate lies inside the field of view");
  return summarize(std::move(d));
}

inline MseDistribution per_coordinate_mse(const net::TouchNetModel& model, const data::Dataset& ds,
                                          std::span<const std::size_t> val_indices, bool fov_filter = true) {
  return per_coordinate_mse(model_predictor(model), ds, val_indices, fov_filter);
}

// ---------------------------------------------------------------- ablation

struct AblationConfig {
  net::TouchNetConfig network;
  std::uint64_t init_seed = 0;  // shared by every run so only the subset varies
  /// epochs is replaced by the fraction rule; val_interval counts base-schedule
  /// epochs, so every run validates equally often in normalised time.
  net::TrainConfig train;
  std::size_t base_epochs = 60;
  bool pooled_t = false;
  bool fov_filter = true;
  /// Runs trained side by side (each run is independent).
  std::size_t threads = 1;
  std::function<void(double fraction_P, std::uint64_t seed, const net::EpochReport&)> on_epoch;
};

struct AblationRun {
  double fraction_P = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  std::size_t train_coordinates = 0;
  net::LossHistory history;
  MseDistribution mse;
  net::TouchNetModel model;
};

struct AblationComparison {
  double fraction_P = 0.0;
  double reference_P = 0.0;
  std::uint64_t seed = 0;
  TestResult t;
  TestResult u;
};

struct AblationReport {
  std::vector<AblationRun> runs;  // P_list order, seeds inner
  std::vector<AblationComparison> comparisons;
  double reference_P = 0.0;
  std::vector<std::size_t> val_indices;

  [[nodiscard]] const AblationRun& run(double fraction_P, std::uint64_t seed) const {
    for (const auto& r : runs) {
      if (r.fraction_P == fraction_P && r.seed == seed) return r;
    }
    throw InvalidArgument("no ablation run for that fraction and seed");
  }
};

/// Trains one model per (P, seed) on split_with_holdout(P, seed) against the
/// dataset's shared validation holdout, with epochs_for_fraction(P) epochs.
/// Each P is tested against the largest P of the list (0.80 in the standard
/// setup) with both the t-test and Mann-Whitney U at the corrected alpha.
inline AblationReport run_ablation(const data::Dataset& ds, std::span<const double> P_list,
                                   std::span<const std::uint64_t> seeds, const AblationConfig& cfg) {
  if (P_list.empty()) throw InvalidArgument("empty fraction list");
  if (seeds.empty()) throw InvalidArgument("empty seed list");
  for (double P : P_list) {
    if (!(P > 0.0) || P > plan::kMaxTrainFraction + 1e-12) throw InvalidArgument("fractions must lie in (0, 0.80]");
  }
  cfg.network.validate();
  AblationReport rep;
  rep.val_indices = ds.split.val_indices;
  if (rep.val_indices.empty()) throw InvalidArgument("dataset has no validation holdout");
  rep.reference_P = *std::max_element(P_list.begin(), P_list.end());

  rep.runs.resize(P_list.size() * seeds.size());
  std::mutex progress;
  parallel_for(
      rep.runs.size(),
      [&](std::size_t k) {
        const double P = P_list[k / seeds.size()];
        const std::uint64_t seed = seeds[k % seeds.size()];
        auto& run = rep.runs[k];
        run.fraction_P = P;
        run.seed = seed;
        run.epochs = net::epochs_for_fraction(P, cfg.base_epochs);
        const auto split = plan::split_with_holdout(ds.plan.size(), P, seed, rep.val_indices);
        run.train_coordinates = split.train_indices.size();
        net::TrainConfig tc = cfg.train;
        tc.epochs = run.epochs;
        tc.val_interval = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::llround(static_cast<double>(cfg.train.val_interval * run.epochs) /
                                                     static_cast<double>(cfg.base_epochs))));
        tc.seed = derive_seed(cfg.train.seed, seed);
        if (cfg.on_epoch) {
          tc.on_epoch = [&, P, seed](const net::EpochReport& e) {
            std::lock_guard lock(progress);
            cfg.on_epoch(P, seed, e);
          };
        }
        try {
          auto res = net::train(net::make_model(cfg.network, cfg.init_seed), ds, split, tc);
          run.history = std::move(res.history);
          run.model = std::move(res.model);
        } catch (const TrainingError& e) {
          std::string msg = e.what();
          if (const auto colon = msg.find(": "); colon != std::string::npos) msg.erase(0, colon + 2);
          throw TrainingError(e.epoch(), "P=" + text::format_double(P) + " seed=" + std::to_string(seed) + ": " + msg);
        }
        run.mse = per_coordinate_mse(run.model, ds, rep.val_indices, cfg.fov_filter);
      },
      std::max<std::size_t>(1, cfg.threads));

  for (const auto& r : rep.runs) {
    if (r.fraction_P == rep.reference_P) continue;
    const auto& ref = rep.run(rep.reference_P, r.seed);
    AblationComparison c;
    c.fraction_P = r.fraction_P;
    c.reference_P = rep.reference_P;
    c.seed = r.seed;
    c.t = t_test(r.mse.values, ref.mse.values, cfg.pooled_t);
    c.u = mann_whitney_u(r.mse.values, ref.mse.values);
    rep.comparisons.push_back(std::move(c));
  }
  return rep;
}

}  // namespace tactile_cal::eval
