#pragma once

#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tactile_cal/dataset.hpp"
#include "tactile_cal/depth_gt.hpp"
#include "tactile_cal/eval.hpp"
#include "tactile_cal/gcode.hpp"
#include "tactile_cal/printer.hpp"
#include "tactile_cal/probe_plan.hpp"
#include "tactile_cal/poisson.hpp"
#include "tactile_cal/report.hpp"
#include "tactile_cal/sensor_sim.hpp"
#include "tactile_cal/touchnet.hpp"

namespace tactile_cal::pipeline {

/// Image -> gradients (eval mode) -> depth by Poisson integration.
inline DepthMap reconstruct_depth(const net::TouchNetModel& model, const TactileImage& image, double pitch_mm) {
  return poisson::integrate(net::predict(model, image), pitch_mm);
}

struct NamedMesh {
  std::string name;
  mesh::TriangleMesh mesh;
};

inline std::vector<NamedMesh> standard_objects(std::size_t resolution = 48) {
  return {{"hemispheres", mesh::make_hemispheres(resolution)},
          {"pill", mesh::make_pill(resolution)},
          {"pawn", mesh::make_pawn(resolution)}};
}

/// Geometry matching a frame size: the default sensor or one of its
/// integer downsamplings.
inline SensorGeometry geometry_for(std::size_t rows, std::size_t cols) {
  const auto full = default_sensor();
  for (std::size_t f = 1; f <= 8; ++f) {
    if (full.rows % f || full.cols % f) continue;
    const auto g = full.downsampled(f);
    if (g.rows == rows && g.cols == cols) return g;
  }
  throw InvalidArgument("no standard sensor geometry is " + std::to_string(rows) + "x" + std::to_string(cols) +
                        "; give the pixel pitch explicitly");
}

struct PressedObject {
  TactileImage image;
  DepthMap ground_truth;
};

/// Renders `object` pressed `indent_mm` into the gel, centred on the sensor.
inline PressedObject press_object(const mesh::TriangleMesh& object, const SensorGeometry& geo,
                                  const sim::IlluminationModel& illum, double indent_mm, std::uint64_t seed) {
  const auto field = mesh::mesh_to_depthmap(object, mesh::object_grid(geo));
  auto r = sim::render_object(field, 0.0, 0.0, indent_mm, illum, seed);
  return {std::move(r.image), std::move(r.ground_truth)};
}

/// Presses each object, reconstructs it with `model` and scores it against
/// its ground truth.
inline std::vector<report::NamedEvaluation> evaluate_objects(const net::TouchNetModel& model,
                                                             const std::vector<NamedMesh>& objects,
                                                             const SensorGeometry& geo,
                                                             const sim::IlluminationModel& illum, double indent_mm,
                                                             std::uint64_t seed,
                                                             eval::DepthAdjust adjust = eval::DepthAdjust::scale) {
  std::vector<report::NamedEvaluation> out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto pressed = press_object(objects[i].mesh, geo, illum, indent_mm, derive_seed(seed, i));
    auto pred = reconstruct_depth(model, pressed.image, geo.pitch_mm);
    auto ev = eval::evaluate_object(pred, pressed.ground_truth, adjust);
    out.push_back({objects[i].name, std::move(ev), std::move(pred)});
  }
  return out;
}

// -------------------------------------------------- simulated calibration

struct CalibrationConfig {
  plan::Extent extent{16.0, 18.0};
  double spacing_mm = 0.5;
  double depth_mm = 1.0;
  std::size_t frames_per_indent = 6;
  SensorGeometry geometry = desk_sensor();
  double noise_sigma = 2.0;
  double probe_radius_mm = data::kDefaultProbeRadius;
  gcode::ProbeRunConfig printer;
  double fraction_P = plan::kMaxTrainFraction;
  std::uint64_t split_seed = 0;
  std::uint64_t holdout_seed = plan::kDefaultHoldoutSeed;
  std::uint64_t capture_seed = 0;
  std::uint64_t init_seed = 0;
  net::TouchNetConfig network = net::TouchNetConfig::desk();
  net::TrainConfig train = default_train();
  double object_indent_mm = 1.0;
  std::uint64_t object_seed = 0;
  eval::DepthAdjust adjust = eval::DepthAdjust::scale;
  std::function<void(const std::string&)> on_stage;

  static net::TrainConfig default_train() {
    net::TrainConfig t;
    t.epochs = net::epochs_for_fraction(plan::kMaxTrainFraction);
    t.crop_size = 32;
    t.val_interval = 5;
    return t;
  }
};

struct CalibrationResult {
  plan::ProbePlan plan;
  plan::PlanSplit split;
  std::vector<gcode::GCodeCommand> program;
  std::vector<gcode::ProbeEvent> events;
  sim::IlluminationModel illumination;
  data::Dataset dataset;
  double baseline_val_mse = 0.0;
  net::TrainResult trained;
  std::vector<report::NamedEvaluation> objects;

  [[nodiscard]] double final_val_mse() const {
    return trained.history.val_mse.empty() ? std::numeric_limits<double>::quiet_NaN()
                                           : trained.history.val_mse.back();
  }
};

/// Plan -> G-code -> virtual probe run -> simulated capture -> training ->
/// reconstruction of the standard objects.
inline CalibrationResult run_calibration(const CalibrationConfig& cfg) {
  auto stage = [&](const std::string& s) {
    if (cfg.on_stage) cfg.on_stage(s);
  };
  CalibrationResult r;
  r.plan = plan::generate_grid(cfg.extent, cfg.spacing_mm, cfg.depth_mm, cfg.frames_per_indent);
  r.split = plan::split_plan(r.plan, cfg.fraction_P, cfg.split_seed, cfg.holdout_seed);
  stage("plan: " + std::to_string(r.plan.size()) + " points, " + std::to_string(r.split.train_indices.size()) +
        " train / " + std::to_string(r.split.val_indices.size()) + " val");

  r.program = gcode::plan_to_gcode(r.plan, cfg.printer);
  r.events = gcode::virtual_execute(r.program, cfg.frames_per_indent, cfg.printer).events;
  if (r.events.size() != r.plan.size()) {
    throw ValidationError("virtual probe run produced " + std::to_string(r.events.size()) + " events for " +
                          std::to_string(r.plan.size()) + " plan points");
  }
  stage("probe: " + std::to_string(r.events.size()) + " events from " + std::to_string(r.program.size()) +
        " commands");

  r.illumination = sim::default_illumination(cfg.geometry, cfg.noise_sigma);
  data::SimulatedSensor backend(cfg.geometry, r.illumination, cfg.probe_radius_mm);
  data::CaptureConfig cc;
  cc.geometry = cfg.geometry;
  cc.probe_radius_mm = cfg.probe_radius_mm;
  cc.printer = cfg.printer;
  r.dataset = data::capture(r.plan, r.split, backend, cc, cfg.capture_seed);
  stage("capture: " + std::to_string(r.dataset.samples.size()) + " frames at " +
        std::to_string(cfg.geometry.cols) + "x" + std::to_string(cfg.geometry.rows));

  auto model = net::make_model(cfg.network, cfg.init_seed);
  const auto val = net::frames_of(r.dataset, r.split.val_indices);
  r.baseline_val_mse = net::evaluate_mse(model, val);
  stage("untrained validation MSE " + text::format_double(r.baseline_val_mse));
  r.trained = net::train(std::move(model), r.dataset, r.split, cfg.train);
  stage("trained validation MSE " + text::format_double(r.final_val_mse()));

  r.objects = evaluate_objects(r.trained.model, standard_objects(), cfg.geometry, r.illumination,
                               cfg.object_indent_mm, cfg.object_seed, cfg.adjust);
  return r;
}

}  // namespace tactile_cal::pipeline
