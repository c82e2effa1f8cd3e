#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <cstdio>
#include <functional>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/grid_file.hpp"
#include "tactile_cal/core/maps.hpp"
#include "tactile_cal/core/parallel.hpp"
#include "tactile_cal/core/png_io.hpp"
#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/core/text.hpp"
#include "tactile_cal/gcode.hpp"
#include "tactile_cal/printer.hpp"
#include "tactile_cal/probe_plan.hpp"
#include "tactile_cal/sensor_sim.hpp"
#include "tactile_cal/serial.hpp"

namespace tactile_cal::data {

inline constexpr double kDefaultProbeRadius = 2.0;
inline constexpr double kDefaultProbeDepth = 1.0;
inline constexpr int kFormatVersion = 1;

/// Analytic supervision target; the simulator renders from the same field.
inline GradientMap make_label(double x_mm, double y_mm, double frame_depth_mm, double probe_radius_mm,
                              const SensorGeometry& geo) {
  return sim::gradients_of(sim::indent_sphere(x_mm, y_mm, frame_depth_mm, probe_radius_mm, geo));
}

/// Depth of frame k (1-based) of F: k * depth / F.
inline double frame_depth(double depth_mm, std::size_t k, std::size_t frames) {
  return static_cast<double>(k) * depth_mm / static_cast<double>(frames);
}

struct Sample {
  TactileImage image;
  GradientMap label;
  plan::ProbePoint probe;
  double frame_depth_mm = 0.0;
  std::size_t plan_index = 0;
  std::size_t frame_index = 0;  // 0-based within the indentation

  bool operator==(const Sample&) const = default;
};

struct Dataset {
  std::vector<Sample> samples;
  SensorGeometry geometry;
  double probe_radius_mm = kDefaultProbeRadius;
  plan::ProbePlan plan;
  plan::PlanSplit split;
  /// Provenance: seed, backend, illumination and plan hashes, frame schedule.
  text::KeyValues manifest;

  bool operator==(const Dataset&) const = default;

  /// Samples whose probe point is in `indices` (sorted), in dataset order.
  [[nodiscard]] std::vector<const Sample*> select(const std::vector<std::size_t>& indices) const {
    std::vector<const Sample*> out;
    for (const auto& s : samples) {
      if (std::binary_search(indices.begin(), indices.end(), s.plan_index)) out.push_back(&s);
    }
    return out;
  }
};

// ---------------------------------------------------------------- backends

struct CaptureRequest {
  std::size_t plan_index = 0;
  std::size_t frame_index = 0;
  plan::ProbePoint commanded;
  gcode::Vec3 achieved;
  double frame_depth_mm = 0.0;
  std::uint64_t seed = 0;
};

class SensorBackend {
 public:
  virtual ~SensorBackend() = default;
  virtual TactileImage capture(const CaptureRequest& req) = 0;
  [[nodiscard]] virtual std::string name() const = 0;
  /// Hash of whatever configures the backend (recorded in the manifest).
  [[nodiscard]] virtual std::string config_hash() const { return "none"; }
  /// True if capture() may be called concurrently for different requests.
  [[nodiscard]] virtual bool concurrent() const { return false; }
};

/// Renders frames with the photometric simulator.
class SimulatedSensor final : public SensorBackend {
 public:
  SimulatedSensor(SensorGeometry geo, sim::IlluminationModel illum, double probe_radius_mm = kDefaultProbeRadius)
      : geo_(geo), illum_(std::move(illum)), radius_(probe_radius_mm) {
    illum_.validate();
    if (illum_.rows() != geo_.rows || illum_.cols() != geo_.cols) {
      throw InvalidArgument("illumination model does not match the sensor geometry");
    }
  }

  TactileImage capture(const CaptureRequest& req) override {
    return sim::render(make_label(req.commanded.x_mm, req.commanded.y_mm, req.frame_depth_mm, radius_, geo_),
                       illum_, req.seed);
  }
  [[nodiscard]] std::string name() const override { return "simulator"; }
  [[nodiscard]] std::string config_hash() const override { return text::hex64(sim::illumination_hash(illum_)); }
  [[nodiscard]] bool concurrent() const override { return true; }
  [[nodiscard]] const sim::IlluminationModel& illumination() const noexcept { return illum_; }

 private:
  SensorGeometry geo_;
  sim::IlluminationModel illum_;
  double radius_;
};

/// Physical sensor hook: one call per frame, issued after the M400 barrier.
class CallbackSensor final : public SensorBackend {
 public:
  using Fn = std::function<TactileImage(const CaptureRequest&)>;
  explicit CallbackSensor(Fn fn, std::string name = "callback") : fn_(std::move(fn)), name_(std::move(name)) {}
  TactileImage capture(const CaptureRequest& req) override { return fn_(req); }
  [[nodiscard]] std::string name() const override { return name_; }

 private:
  Fn fn_;
  std::string name_;
};

// ----------------------------------------------------------------- capture

struct CaptureConfig {
  SensorGeometry geometry = default_sensor();
  double probe_radius_mm = kDefaultProbeRadius;
  gcode::ProbeRunConfig printer;
  /// When set, commands go to a real printer and frames are grabbed inside
  /// the barrier acknowledgement; otherwise the virtual printer is used.
  gcode::LineTransport* transport = nullptr;
  std::chrono::milliseconds ack_timeout{30000};
};

/// Backend failure mid-capture: carries every fully captured point so the run
/// can be resumed.
class CaptureError : public Error {
 public:
  CaptureError(std::size_t failed_index, std::vector<std::size_t> completed, Dataset partial, const std::string& why)
      : Error("capture failed at probe point " + std::to_string(failed_index) + " (" +
              std::to_string(completed.size()) + " points completed): " + why),
        failed_index_(failed_index),
        completed_(std::move(completed)),
        partial_(std::make_shared<Dataset>(std::move(partial))) {}

  [[nodiscard]] std::size_t failed_index() const noexcept { return failed_index_; }
  [[nodiscard]] const std::vector<std::size_t>& completed() const noexcept { return completed_; }
  [[nodiscard]] const Dataset& partial() const noexcept { return *partial_; }

 private:
  std::size_t failed_index_;
  std::vector<std::size_t> completed_;
  std::shared_ptr<Dataset> partial_;
};

inline std::string plan_hash(const plan::ProbePlan& p) { return text::hex64(text::fnv1a(plan::write_plan_csv(p))); }

namespace detail {

inline void check_split(const plan::ProbePlan& p, const plan::PlanSplit& s) {
  std::vector<bool> seen(p.size(), false);
  for (const auto* v : {&s.train_indices, &s.val_indices}) {
    for (auto i : *v) {
      if (i >= p.size()) throw ValidationError("split index " + std::to_string(i) + " is outside the plan");
      if (seen[i]) throw ValidationError("split index " + std::to_string(i) + " appears twice");
      seen[i] = true;
    }
  }
}

inline std::vector<std::size_t> completed_points(const Dataset& d) {
  std::vector<std::size_t> pts;
  for (const auto& s : d.samples) pts.push_back(s.plan_index);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

}  // namespace detail

/// Probes every plan point, capturing frames_per_indent frames at depths
/// k * depth / F (k = 1..F), each with its analytic label. Sample seeds are
/// derived from (seed, plan index, frame), so a resumed run (pass the partial
/// dataset from a CaptureError) equals an uninterrupted one.
inline Dataset capture(const plan::ProbePlan& p, const plan::PlanSplit& split, SensorBackend& backend,
                       const CaptureConfig& cfg, std::uint64_t seed, const Dataset* resume_from = nullptr) {
  plan::validate(p);
  detail::check_split(p, split);
  for (const auto& q : p.points) {
    if (q.depth_mm > cfg.probe_radius_mm) throw ValidationError("probe depth exceeds the probe radius");
  }
  const std::size_t F = p.frames_per_indent;

  Dataset ds;
  ds.geometry = cfg.geometry;
  ds.probe_radius_mm = cfg.probe_radius_mm;
  ds.plan = p;
  ds.split = split;
  ds.manifest["seed"] = std::to_string(seed);
  ds.manifest["backend"] = backend.name();
  ds.manifest["backend_config_hash"] = backend.config_hash();
  ds.manifest["plan_hash"] = plan_hash(p);
  ds.manifest["frame_schedule"] = "linear: depth_k = k * depth / frames, k = 1..frames";

  std::vector<bool> done(p.size(), false);
  if (resume_from) {
    if (resume_from->manifest != ds.manifest || resume_from->geometry != ds.geometry ||
        resume_from->probe_radius_mm != ds.probe_radius_mm || resume_from->plan != p) {
      throw ValidationError("partial dataset was captured with a different configuration");
    }
    ds.samples = resume_from->samples;
    for (auto i : detail::completed_points(*resume_from)) done[i] = true;
  }
  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!done[i]) todo.push_back(i);
  }
  plan::ProbePlan sub = p;
  sub.points.clear();
  sub.extent = {};
  for (auto i : todo) sub.points.push_back(p.points[i]);

  auto request = [&](const gcode::ProbeEvent& ev, std::size_t plan_index, std::size_t k) {
    CaptureRequest rq;
    rq.plan_index = plan_index;
    rq.frame_index = k;
    rq.commanded = p.points[plan_index];
    rq.achieved = ev.achieved;
    rq.frame_depth_mm = frame_depth(rq.commanded.depth_mm, k + 1, F);
    rq.seed = derive_seed(seed, plan_index, k);
    return rq;
  };
  auto make_samples = [&](const gcode::ProbeEvent& ev, std::size_t plan_index) {
    std::vector<Sample> out;
    out.reserve(F);
    for (std::size_t k = 0; k < F; ++k) {
      const auto rq = request(ev, plan_index, k);
      Sample s;
      s.image = backend.capture(rq);
      if (s.image.rows != cfg.geometry.rows || s.image.cols != cfg.geometry.cols ||
          s.image.pixels.size() != s.image.rows * s.image.cols * 3) {
        throw ValidationError("backend returned a frame of the wrong size");
      }
      s.label = make_label(rq.commanded.x_mm, rq.commanded.y_mm, rq.frame_depth_mm, cfg.probe_radius_mm, cfg.geometry);
      s.probe = rq.commanded;
      s.frame_depth_mm = rq.frame_depth_mm;
      s.plan_index = plan_index;
      s.frame_index = k;
      out.push_back(std::move(s));
    }
    return out;
  };

  std::vector<std::vector<Sample>> results(todo.size());
  std::vector<char> ok(todo.size(), 0);
  std::optional<std::pair<std::size_t, std::string>> failure;

  const auto program = gcode::plan_to_gcode(sub, cfg.printer);
  if (cfg.transport) {
    gcode::SerialRunOptions opt;
    opt.frames_per_indent = F;
    opt.printer = cfg.printer;
    opt.ack_timeout = cfg.ack_timeout;
    std::stop_source halt;  // stop probing once a frame grab fails
    opt.stop = halt.get_token();
    opt.on_event = [&](const gcode::ProbeEvent& ev) {
      if (failure) return;
      const std::size_t slot = ev.plan_index;
      try {
        results[slot] = make_samples(ev, todo[slot]);
        ok[slot] = 1;
      } catch (const std::exception& e) {
        failure = {todo[slot], e.what()};
        halt.request_stop();
      }
    };
    const auto run = gcode::serial_run(program, *cfg.transport, opt);
    if (!failure && run.status == gcode::RunStatus::aborted) {
      const auto it = std::find(ok.begin(), ok.end(), 0);
      failure = {it == ok.end() ? p.size() : todo[static_cast<std::size_t>(it - ok.begin())], "printer run aborted"};
    }
  } else {
    const auto exec = gcode::virtual_execute(program, F, cfg.printer);
    auto one = [&](std::size_t slot) {
      try {
        results[slot] = make_samples(exec.events[slot], todo[slot]);
        ok[slot] = 1;
      } catch (const std::exception& e) {
        return std::optional<std::string>(e.what());
      }
      return std::optional<std::string>();
    };
    if (backend.concurrent()) {
      std::vector<std::optional<std::string>> errs(todo.size());
      parallel_for(todo.size(), [&](std::size_t i) { errs[i] = one(i); });
      for (std::size_t i = 0; i < todo.size() && !failure; ++i) {
        if (errs[i]) failure = {todo[i], *errs[i]};
      }
    } else {
      for (std::size_t i = 0; i < todo.size() && !failure; ++i) {
        if (auto e = one(i)) failure = {todo[i], *e};
      }
    }
  }

  for (std::size_t i = 0; i < todo.size(); ++i) {
    if (ok[i]) std::move(results[i].begin(), results[i].end(), std::back_inserter(ds.samples));
  }
  std::stable_sort(ds.samples.begin(), ds.samples.end(), [](const Sample& a, const Sample& b) {
    return std::tie(a.plan_index, a.frame_index) < std::tie(b.plan_index, b.frame_index);
  });
  if (failure) {
    auto completed = detail::completed_points(ds);
    throw CaptureError(failure->first, std::move(completed), std::move(ds), failure->second);
  }
  return ds;
}

// -------------------------------------------------------------- persistence
// <dir>/manifest.txt   key=value, format_version=1, checksums of the tables
// <dir>/plan.csv, split.csv, samples.csv
// <dir>/images/NNNNNN.png, labels/NNNNNN.grid   (N = sample index)

namespace detail {

inline std::string sample_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

inline std::uint32_t crc_of_text(const std::string& s) {
  return crc32_of(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

inline std::string crc_hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

inline constexpr std::string_view kSamplesHeader =
    "index,plan_index,frame_index,x_mm,y_mm,depth_mm,frame_depth_mm,image_crc32";

}  // namespace detail

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  std::ostringstream samples;
  samples << detail::kSamplesHeader << '\n';
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    const auto png = encode_png(s.image);
    write_file_bytes(dir / "images" / (detail::sample_name(i) + ".png"), png);
    save_grid(dir / "labels" / (detail::sample_name(i) + ".grid"), to_grid(s.label));
    samples << i << ',' << s.plan_index << ',' << s.frame_index << ',' << text::format_double(s.probe.x_mm) << ','
            << text::format_double(s.probe.y_mm) << ',' << text::format_double(s.probe.depth_mm) << ','
            << text::format_double(s.frame_depth_mm) << ',' << detail::crc_hex(crc32_of(png)) << '\n';
  }
  const std::string plan_csv = plan::write_plan_csv(ds.plan);
  const std::string split_csv = plan::write_split_csv(ds.split);
  const std::string samples_csv = samples.str();
  write_text_file(dir / "plan.csv", plan_csv);
  write_text_file(dir / "split.csv", split_csv);
  write_text_file(dir / "samples.csv", samples_csv);

  text::KeyValues kv;
  for (const auto& [k, v] : ds.manifest) kv["provenance." + k] = v;
  kv["format_version"] = std::to_string(kFormatVersion);
  kv["sample_count"] = std::to_string(ds.samples.size());
  kv["probe_radius_mm"] = text::format_double(ds.probe_radius_mm);
  kv["sensor.rows"] = std::to_string(ds.geometry.rows);
  kv["sensor.cols"] = std::to_string(ds.geometry.cols);
  kv["sensor.pitch_mm"] = text::format_double(ds.geometry.pitch_mm);
  kv["sensor.center_x_mm"] = text::format_double(ds.geometry.center_x_mm);
  kv["sensor.center_y_mm"] = text::format_double(ds.geometry.center_y_mm);
  kv["plan.frames_per_indent"] = std::to_string(ds.plan.frames_per_indent);
  kv["plan.spacing_mm"] = text::format_double(ds.plan.spacing_mm);
  kv["plan.extent_width_mm"] = text::format_double(ds.plan.extent.width_mm);
  kv["plan.extent_height_mm"] = text::format_double(ds.plan.extent.height_mm);
  kv["split.fraction_P"] = text::format_double(ds.split.fraction_P);
  kv["split.seed"] = std::to_string(ds.split.seed);
  kv["crc32.plan_csv"] = detail::crc_hex(detail::crc_of_text(plan_csv));
  kv["crc32.split_csv"] = detail::crc_hex(detail::crc_of_text(split_csv));
  kv["crc32.samples_csv"] = detail::crc_hex(detail::crc_of_text(samples_csv));
  write_text_file(dir / "manifest.txt", text::write_key_values(kv));
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto kv = text::parse_key_values(read_text_file(dir / "manifest.txt"));
  const auto ver = kv.find("format_version");
  if (ver == kv.end()) throw VersionError("dataset manifest has no format_version (pre-v1 layout)");
  if (ver->second != std::to_string(kFormatVersion)) {
    throw VersionError("dataset format_version " + ver->second + " is not supported (expected " +
                       std::to_string(kFormatVersion) + ")");
  }
  auto checked_text = [&](const char* file, const char* key) {
    const auto s = read_text_file(dir / file);
    if (detail::crc_hex(detail::crc_of_text(s)) != text::require_key(kv, key)) {
      throw ChecksumError(std::string(file) + " does not match its manifest checksum");
    }
    return s;
  };
  Dataset ds;
  for (const auto& [k, v] : kv) {
    if (k.starts_with("provenance.")) ds.manifest[k.substr(11)] = v;
  }
  ds.probe_radius_mm = text::require_double(kv, "probe_radius_mm");
  ds.geometry.rows = text::require_u64(kv, "sensor.rows");
  ds.geometry.cols = text::require_u64(kv, "sensor.cols");
  ds.geometry.pitch_mm = text::require_double(kv, "sensor.pitch_mm");
  ds.geometry.center_x_mm = text::require_double(kv, "sensor.center_x_mm");
  ds.geometry.center_y_mm = text::require_double(kv, "sensor.center_y_mm");

  const auto frames = text::require_u64(kv, "plan.frames_per_indent");
  ds.plan = plan::read_plan_csv(checked_text("plan.csv", "crc32.plan_csv"), frames);
  ds.plan.spacing_mm = text::require_double(kv, "plan.spacing_mm");
  ds.plan.extent = {text::require_double(kv, "plan.extent_width_mm"), text::require_double(kv, "plan.extent_height_mm")};
  ds.split = plan::read_split_csv(checked_text("split.csv", "crc32.split_csv"), ds.plan.size());
  ds.split.fraction_P = text::require_double(kv, "split.fraction_P");
  ds.split.seed = text::require_u64(kv, "split.seed");

  const auto samples_csv = checked_text("samples.csv", "crc32.samples_csv");
  const auto rows = text::lines(samples_csv);
  if (rows.empty() || text::trim(rows[0]) != detail::kSamplesHeader) throw FormatError("bad samples.csv header");
  const auto count = text::require_u64(kv, "sample_count");
  for (std::size_t li = 1; li < rows.size(); ++li) {
    if (text::trim(rows[li]).empty()) continue;
    const auto f = text::split(rows[li], ',');
    if (f.size() != 8) throw ParseError(li + 1, "samples.csv: expected 8 columns");
    std::uint64_t idx = 0, pi = 0, fi = 0;
    Sample s;
    if (!text::parse_u64(f[0], idx) || !text::parse_u64(f[1], pi) || !text::parse_u64(f[2], fi) ||
        !text::parse_double(f[3], s.probe.x_mm) || !text::parse_double(f[4], s.probe.y_mm) ||
        !text::parse_double(f[5], s.probe.depth_mm) || !text::parse_double(f[6], s.frame_depth_mm)) {
      throw ParseError(li + 1, "samples.csv: bad field");
    }
    if (idx != ds.samples.size()) throw ParseError(li + 1, "samples.csv: indices must be consecutive");
    s.plan_index = pi;
    s.frame_index = fi;
    const auto name = detail::sample_name(idx);
    const auto png = read_file_bytes(dir / "images" / (name + ".png"));
    if (detail::crc_hex(crc32_of(png)) != text::trim(f[7])) throw ChecksumError("image " + name + " is corrupted");
    s.image = decode_png(png);
    // Labels are analytic: rebuild the exact field and require the stored
    // float copy to agree bit for bit.
    const auto stored = load_grid(dir / "labels" / (name + ".grid"));
    s.label = make_label(s.probe.x_mm, s.probe.y_mm, s.frame_depth_mm, ds.probe_radius_mm, ds.geometry);
    if (stored != to_grid(s.label)) throw FormatError("label " + name + " does not match its probe metadata");
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.size() != count) throw FormatError("sample_count does not match samples.csv");
  return ds;
}

}  // namespace tactile_cal::data
