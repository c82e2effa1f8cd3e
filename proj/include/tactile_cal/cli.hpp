#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tactile_cal/pipeline.hpp"
#include "tactile_cal/serial.hpp"

#ifndef TACTILE_CAL_VERSION
#define TACTILE_CAL_VERSION "0.0.0"
#endif

namespace tactile_cal::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

// ---------------------------------------------------------------- manifest

/// Provenance for one invocation, written next to its outputs. Contains no
/// timestamps so identical runs produce identical manifests.
struct RunManifest {
  std::string subcommand;
  std::string config_path;
  std::map<std::string, std::uint64_t> seeds;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::string tool_version = TACTILE_CAL_VERSION;
  text::KeyValues options;

  [[nodiscard]] std::string config_hash() const { return text::hex64(text::fnv1a(text::write_key_values(options))); }

  [[nodiscard]] std::string to_text() const {
    text::KeyValues kv;
    kv["subcommand"] = subcommand;
    kv["config_path"] = config_path.empty() ? "none" : config_path;
    kv["tool_version"] = tool_version;
    kv["config_hash"] = config_hash();
    for (const auto& [k, v] : seeds) kv["seed." + k] = std::to_string(v);
    for (std::size_t i = 0; i < inputs.size(); ++i) kv["input." + std::to_string(i)] = inputs[i];
    for (std::size_t i = 0; i < outputs.size(); ++i) kv["output." + std::to_string(i)] = outputs[i];
    for (const auto& [k, v] : options) kv["option." + k] = v;
    return text::write_key_values(kv);
  }
};

inline RunManifest parse_manifest(std::string_view doc) {
  const auto kv = text::parse_key_values(doc);
  RunManifest m;
  m.subcommand = text::require_key(kv, "subcommand");
  m.config_path = text::require_key(kv, "config_path");
  if (m.config_path == "none") m.config_path.clear();
  m.tool_version = text::require_key(kv, "tool_version");
  std::map<std::size_t, std::string> in, out;
  for (const auto& [k, v] : kv) {
    std::uint64_t idx = 0;
    if (k.rfind("seed.", 0) == 0) {
      if (!text::parse_u64(v, m.seeds[k.substr(5)])) throw ParseError(0, "bad seed in manifest: " + k);
    } else if (k.rfind("input.", 0) == 0 && text::parse_u64(k.substr(6), idx)) {
      in[idx] = v;
    } else if (k.rfind("output.", 0) == 0 && text::parse_u64(k.substr(7), idx)) {
      out[idx] = v;
    } else if (k.rfind("option.", 0) == 0) {
      m.options[k.substr(7)] = v;
    }
  }
  for (auto& [i, v] : in) m.inputs.push_back(v);
  for (auto& [i, v] : out) m.outputs.push_back(v);
  if (m.config_hash() != text::require_key(kv, "config_hash")) {
    throw ChecksumError("manifest config_hash does not match its options");
  }
  return m;
}

/// `<file>.manifest.txt` for file outputs, `<dir>/run_manifest.txt` for
/// directory outputs.
inline fs::path manifest_path_for(const fs::path& output, bool is_directory) {
  if (is_directory) return output / "run_manifest.txt";
  auto p = output;
  p += ".manifest.txt";
  return p;
}

// ----------------------------------------------------------- option parsing

inline plan::Extent parse_extent(const std::string& s) {
  const auto x = s.find_first_of("xX");
  double w = 0.0, h = 0.0;
  if (x == std::string::npos || !text::parse_double(s.substr(0, x), w) || !text::parse_double(s.substr(x + 1), h) ||
      !(w > 0.0) || !(h > 0.0)) {
    throw ValidationError("extent must look like WIDTHxHEIGHT in mm (e.g. 16x18), got '" + s + "'");
  }
  return {w, h};
}

inline net::TouchNetConfig parse_widths(const std::string& s, double dropout) {
  net::TouchNetConfig c;
  if (s == "desk") {
    c = net::TouchNetConfig::desk();
  } else if (s != "full") {
    c.module_channels.clear();
    for (auto part : text::split(s, ',')) {
      std::uint64_t w = 0;
      if (!text::parse_u64(text::trim(part), w)) throw ValidationError("bad module width '" + std::string(part) + "'");
      c.module_channels.push_back(static_cast<std::size_t>(w));
    }
  }
  c.dropout_p = dropout;
  c.validate();
  return c;
}

inline SensorGeometry parse_resolution(const std::string& s) {
  if (s == "desk") return desk_sensor();
  if (s == "full") return default_sensor();
  throw ValidationError("resolution must be 'desk' or 'full', got '" + s + "'");
}

inline SensorGeometry geometry_with_pitch(std::size_t rows, std::size_t cols, std::optional<double> pitch) {
  if (!pitch) return pipeline::geometry_for(rows, cols);
  if (!(*pitch > 0.0)) throw ValidationError("pitch must be positive");
  SensorGeometry g = default_sensor();
  g.rows = rows;
  g.cols = cols;
  g.pitch_mm = *pitch;
  return g;
}

/// Every option of `sub` as name -> value (given or default), for manifests.
inline text::KeyValues collect_options(const CLI::App& sub) {
  text::KeyValues kv;
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "h") continue;
    std::string v;
    if (o->count() > 0) {
      const auto& res = o->results();
      for (std::size_t i = 0; i < res.size(); ++i) v += (i ? "," : "") + res[i];
    } else {
      v = o->get_default_str();
    }
    kv[name] = v;
  }
  return kv;
}

// ---------------------------------------------------------------- options

struct TrainOpts {
  double lr = 1e-4;
  double wd = 1e-4;
  std::size_t batch = 64;
  std::size_t crop = 32;
  std::size_t val_interval = 5;
  std::string widths = "desk";
  double dropout = 0.05;
  std::uint64_t init_seed = 0;
  std::uint64_t train_seed = 0;

  void add_to(CLI::App* s) {
    s->add_option("--lr", lr, "AdamW learning rate")->check(CLI::PositiveNumber);
    s->add_option("--weight-decay", wd, "AdamW weight decay")->check(CLI::NonNegativeNumber);
    s->add_option("--batch", batch, "mini-batch size")->check(CLI::PositiveNumber);
    s->add_option("--crop", crop, "training window size in pixels, 0 for whole frames");
    s->add_option("--val-interval", val_interval, "validate every n-th epoch")->check(CLI::PositiveNumber);
    s->add_option("--widths", widths, "module widths: desk, full, or nine comma-separated counts");
    s->add_option("--dropout", dropout, "spatial dropout probability")->check(CLI::Range(0.0, 0.99));
    s->add_option("--init-seed", init_seed, "weight initialisation seed");
    s->add_option("--train-seed", train_seed, "batch order, crop and dropout seed");
  }

  [[nodiscard]] net::TrainConfig config(std::size_t epochs) const {
    net::TrainConfig t;
    t.learning_rate = lr;
    t.weight_decay = wd;
    t.batch_size = batch;
    t.epochs = epochs;
    t.seed = train_seed;
    t.crop_size = crop;
    t.val_interval = val_interval;
    return t;
  }
};

struct Options {
  std::string config_path;
  std::size_t threads = 0;

  struct {
    std::string extent, out, split_out;
    double spacing = 0.5, depth = 1.0, fraction = plan::kMaxTrainFraction;
    std::size_t frames = 30;
    std::uint64_t seed = 0, holdout_seed = plan::kDefaultHoldoutSeed;
  } plan;

  struct {
    double z_touch = 10.0, travel_z = 15.0, feed_travel = 3000.0, feed_probe = 300.0;
    [[nodiscard]] gcode::ProbeRunConfig config() const {
      gcode::ProbeRunConfig c;
      c.z_touch_mm = z_touch;
      c.travel_z_mm = travel_z;
      c.feed_travel = feed_travel;
      c.feed_probe = feed_probe;
      return c;
    }
  } machine;

  struct {
    std::string plan, out;
  } gcode;

  struct {
    std::string plan, gcode, out, port;
    bool is_virtual = false;
    unsigned baud = 115200;
    std::size_t frames = 30;
    std::size_t ack_timeout_ms = 30000;
  } probe;

  struct {
    std::string plan, out, split, resolution = "desk";
    std::size_t frames = 30;
    double fraction = plan::kMaxTrainFraction, noise = 2.0, probe_radius = data::kDefaultProbeRadius;
    std::uint64_t seed = 0, split_seed = 0, holdout_seed = plan::kDefaultHoldoutSeed;
  } capture;

  struct {
    std::string data, out, history;
    std::size_t epochs = 60;
    TrainOpts t;
  } train;

  struct {
    std::string data, out;
    std::vector<double> fractions{0.8, 0.2, 0.05, 0.01};
    std::vector<std::uint64_t> seeds{0};
    std::size_t base_epochs = 60, parallel_runs = 1;
    bool pooled = false, no_fov_filter = false;
    TrainOpts t;
  } ablate;

  struct {
    std::string model, image, out, gradients;
    std::optional<double> pitch;
  } infer;

  struct {
    std::string pred, gt, object, stl, out, name, adjust = "scale";
    double indent = 1.0;
    std::optional<double> pitch;
    bool no_clamp = false;
  } eval;

  struct {
    std::string out, resolution = "desk";
    double spacing = 0.5, fraction = plan::kMaxTrainFraction, indent = 1.0, noise = 2.0;
    std::size_t frames = 6, epochs = 60;
    std::uint64_t seed = 0;
    TrainOpts t;
  } demo;
};

inline eval::DepthAdjust parse_adjust(const std::string& s) {
  if (s == "scale") return eval::DepthAdjust::scale;
  if (s == "offset") return eval::DepthAdjust::offset;
  throw ValidationError("adjust must be 'scale' or 'offset', got '" + s + "'");
}

// ------------------------------------------------------------- artifacts

inline std::string events_csv(const std::vector<gcode::ProbeEvent>& events) {
  std::ostringstream os;
  os << "plan_index,commanded_x_mm,commanded_y_mm,commanded_depth_mm,achieved_x_mm,achieved_y_mm,achieved_z_mm,"
        "first_frame,frames\n";
  for (const auto& e : events) {
    os << e.plan_index << ',' << text::format_double(e.commanded.x_mm) << ','
       << text::format_double(e.commanded.y_mm) << ',' << text::format_double(e.commanded.depth_mm) << ','
       << text::format_double(e.achieved.x) << ',' << text::format_double(e.achieved.y) << ','
       << text::format_double(e.achieved.z) << ',' << (e.frame_indices.empty() ? 0 : e.frame_indices.front())
       << ',' << e.frame_indices.size() << '\n';
  }
  return os.str();
}

inline std::string history_csv(const net::LossHistory& h) {
  std::ostringstream os;
  os << "epoch,train_mse,val_mse\n";
  for (std::size_t e = 0; e < h.train_mse.size(); ++e) {
    os << e << ',' << text::format_double(h.train_mse[e]) << ','
       << (std::isnan(h.val_mse[e]) ? std::string() : text::format_double(h.val_mse[e])) << '\n';
  }
  return os.str();
}

inline TactileImage history_plot(const net::LossHistory& h, const std::string& title) {
  report::Series tr{"train", {}, h.train_mse, report::palette(0), false, false};
  report::Series va{"val", {}, h.val_mse, report::palette(1), false, true};
  for (std::size_t e = 0; e < h.train_mse.size(); ++e) {
    tr.x.push_back(static_cast<double>(e + 1));
    va.x.push_back(static_cast<double>(e + 1));
  }
  report::LinePlotOptions o;
  o.title = title;
  o.x_label = "epoch";
  o.y_label = "gradient MSE";
  o.log_y = true;
  return report::line_plot({tr, va}, o);
}

// ------------------------------------------------------------- dispatcher

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Tactile sensor calibration: probe planning, capture, training and evaluation", "tactile-cal"};
    app.option_defaults()->always_capture_default();
    app.set_version_flag("--version", TACTILE_CAL_VERSION);
    app.set_config("--config", "", "key = value config file; [subcommand] sections apply to that subcommand");
    app.add_option("--threads", o_.threads, "worker threads (sets TACTILE_CAL_THREADS)");
    app.require_subcommand(1);
    app.fallthrough();
    define(app);

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) return app.exit(e, out_, err_);
      // CLI11 reports a stray word as a missing subcommand; name it instead.
      if (argc > 1 && argv[1][0] != '-' && !handlers_.contains(argv[1])) {
        err_ << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
        return kExitValidation;
      }
      err_ << "error: " << e.what() << "\n\n" << app.help();
      return kExitValidation;
    }
    if (o_.threads > 0) ::setenv("TACTILE_CAL_THREADS", std::to_string(o_.threads).c_str(), 1);
    if (auto* c = app.get_config_ptr(); c && c->count() > 0) o_.config_path = c->as<std::string>();

    CLI::App* sub = app.get_subcommands().front();
    try {
      handlers_.at(sub->get_name())(*sub);
      return kExitOk;
    } catch (const IoError& e) {
      return fail(e, kExitIo);
    } catch (const FormatError& e) {
      return fail(e, kExitIo);
    } catch (const ChecksumError& e) {
      return fail(e, kExitIo);
    } catch (const VersionError& e) {
      return fail(e, kExitIo);
    } catch (const TransportError& e) {
      return fail(e, kExitIo);
    } catch (const data::CaptureError& e) {
      return fail(e, kExitIo);
    } catch (const std::exception& e) {
      return fail(e, kExitValidation);
    }
  }

 private:
  int fail(const std::exception& e, int code) {
    err_ << "error: " << e.what() << '\n';
    return code;
  }

  RunManifest manifest(const CLI::App& sub) const {
    RunManifest m;
    m.subcommand = sub.get_name();
    m.config_path = o_.config_path;
    m.options = collect_options(sub);
    return m;
  }

  void write_manifest(const RunManifest& m, const fs::path& output, bool is_directory) {
    write_text_file(manifest_path_for(output, is_directory), m.to_text());
  }

  static void add_machine(CLI::App* s, decltype(Options::machine)& m) {
    s->add_option("--z-touch", m.z_touch, "z (mm) at which the tip first touches the gel");
    s->add_option("--travel-z", m.travel_z, "safe travel height (mm)");
    s->add_option("--feed-travel", m.feed_travel, "travel feed (mm/min)")->check(CLI::PositiveNumber);
    s->add_option("--feed-probe", m.feed_probe, "plunge feed (mm/min)")->check(CLI::PositiveNumber);
  }

  void define(CLI::App& app) {
    // plan
    auto* p = app.add_subcommand("plan", "Generate a grid probing plan (CSV)");
    p->add_option("--extent", o_.plan.extent, "probing area WIDTHxHEIGHT in mm")->required();
    p->add_option("--spacing", o_.plan.spacing, "grid spacing (mm)")->check(CLI::PositiveNumber);
    p->add_option("--depth", o_.plan.depth, "indentation depth (mm)")->check(CLI::NonNegativeNumber);
    p->add_option("--frames", o_.plan.frames, "frames per indentation")->check(CLI::PositiveNumber);
    p->add_option("--out", o_.plan.out, "plan CSV")->required();
    p->add_option("--split-out", o_.plan.split_out, "also write a train/val split CSV");
    p->add_option("--fraction", o_.plan.fraction, "training fraction P for --split-out");
    p->add_option("--seed", o_.plan.seed, "training-subset seed");
    p->add_option("--holdout-seed", o_.plan.holdout_seed, "validation holdout seed");
    handlers_["plan"] = [this](const CLI::App& s) { cmd_plan(s); };

    // gcode
    auto* g = app.add_subcommand("gcode", "Render a plan as a probing G-code program");
    g->add_option("--plan", o_.gcode.plan, "plan CSV")->required();
    g->add_option("--out", o_.gcode.out, "G-code file")->required();
    add_machine(g, o_.machine);
    handlers_["gcode"] = [this](const CLI::App& s) { cmd_gcode(s); };

    // probe
    auto* pr = app.add_subcommand("probe", "Run a probing program on the virtual printer or over serial");
    auto* pp = pr->add_option("--plan", o_.probe.plan, "plan CSV");
    auto* pg = pr->add_option("--gcode", o_.probe.gcode, "G-code program");
    pp->excludes(pg);
    auto* virt = pr->add_flag("--virtual", o_.probe.is_virtual, "use the in-process virtual printer");
    auto* port = pr->add_option("--port", o_.probe.port, "serial device, e.g. /dev/ttyUSB0");
    virt->excludes(port);
    pr->add_option("--baud", o_.probe.baud, "serial baud rate");
    pr->add_option("--ack-timeout-ms", o_.probe.ack_timeout_ms, "serial ack timeout");
    pr->add_option("--frames", o_.probe.frames, "frames per indentation")->check(CLI::PositiveNumber);
    pr->add_option("--out", o_.probe.out, "event log CSV (default: next to the input, .events.csv)");
    add_machine(pr, o_.machine);
    handlers_["probe"] = [this](const CLI::App& s) { cmd_probe(s); };

    // capture-sim
    auto* c = app.add_subcommand("capture-sim", "Capture a simulated dataset for a plan");
    c->add_option("--plan", o_.capture.plan, "plan CSV")->required();
    c->add_option("--out", o_.capture.out, "dataset directory")->required();
    c->add_option("--split", o_.capture.split, "existing split CSV (otherwise one is drawn)");
    c->add_option("--resolution", o_.capture.resolution, "desk (80x60) or full (160x120)");
    c->add_option("--frames", o_.capture.frames, "frames per indentation")->check(CLI::PositiveNumber);
    c->add_option("--fraction", o_.capture.fraction, "training fraction P");
    c->add_option("--seed", o_.capture.seed, "capture (sensor noise) seed");
    c->add_option("--split-seed", o_.capture.split_seed, "training-subset seed");
    c->add_option("--holdout-seed", o_.capture.holdout_seed, "validation holdout seed");
    c->add_option("--noise", o_.capture.noise, "sensor noise sigma (intensity levels)")->check(CLI::NonNegativeNumber);
    c->add_option("--probe-radius", o_.capture.probe_radius, "spherical probe radius (mm)")
        ->check(CLI::PositiveNumber);
    add_machine(c, o_.machine);
    handlers_["capture-sim"] = [this](const CLI::App& s) { cmd_capture(s); };

    // train
    auto* t = app.add_subcommand("train", "Train a gradient network on a dataset");
    t->add_option("--data", o_.train.data, "dataset directory")->required();
    t->add_option("--out", o_.train.out, "checkpoint file")->required();
    t->add_option("--epochs", o_.train.epochs, "epochs")->check(CLI::PositiveNumber);
    t->add_option("--history", o_.train.history, "loss CSV (default: <out>.history.csv)");
    o_.train.t.add_to(t);
    handlers_["train"] = [this](const CLI::App& s) { cmd_train(s); };

    // ablate
    auto* a = app.add_subcommand("ablate", "Training-fraction ablation with per-coordinate MSE statistics");
    a->add_option("--data", o_.ablate.data, "dataset directory")->required();
    a->add_option("--out", o_.ablate.out, "report directory")->required();
    a->add_option("--fractions", o_.ablate.fractions, "training fractions P")->delimiter(',');
    a->add_option("--seeds", o_.ablate.seeds, "subset seeds")->delimiter(',');
    a->add_option("--base-epochs", o_.ablate.base_epochs, "epochs at P = 0.8")->check(CLI::PositiveNumber);
    a->add_option("--parallel-runs", o_.ablate.parallel_runs, "runs trained side by side")
        ->check(CLI::PositiveNumber);
    a->add_flag("--pooled", o_.ablate.pooled, "pooled-variance t-test instead of Welch");
    a->add_flag("--no-fov-filter", o_.ablate.no_fov_filter, "keep coordinates outside the field of view");
    o_.ablate.t.add_to(a);
    handlers_["ablate"] = [this](const CLI::App& s) { cmd_ablate(s); };

    // infer
    auto* i = app.add_subcommand("infer", "Reconstruct depth from one tactile image");
    i->add_option("--model", o_.infer.model, "checkpoint")->required();
    i->add_option("--image", o_.infer.image, "RGB PNG frame")->required();
    i->add_option("--out", o_.infer.out, "depth grid")->required();
    i->add_option("--gradients", o_.infer.gradients, "also write the predicted gradient grid");
    i->add_option("--pitch", o_.infer.pitch, "pixel pitch (mm); inferred from the frame size if omitted");
    handlers_["infer"] = [this](const CLI::App& s) { cmd_infer(s); };

    // eval
    auto* e = app.add_subcommand("eval", "Score a reconstructed depth map against ground truth");
    e->add_option("--pred", o_.eval.pred, "predicted depth grid")->required();
    auto* gt = e->add_option("--gt", o_.eval.gt, "ground-truth depth grid");
    auto* ob = e->add_option("--object", o_.eval.object, "built-in object: pill, pawn or hemispheres");
    auto* st = e->add_option("--stl", o_.eval.stl, "object mesh (STL)");
    gt->excludes(ob)->excludes(st);
    ob->excludes(st);
    e->add_option("--indent", o_.eval.indent, "indentation depth for --object/--stl (mm)");
    e->add_option("--pitch", o_.eval.pitch, "pixel pitch (mm); inferred from the grid size if omitted");
    e->add_option("--adjust", o_.eval.adjust, "depth adjustment: scale or offset");
    e->add_flag("--no-clamp", o_.eval.no_clamp, "keep negative predicted depths");
    e->add_option("--name", o_.eval.name, "object name in the report");
    e->add_option("--out", o_.eval.out, "report directory")->required();
    handlers_["eval"] = [this](const CLI::App& s) { cmd_eval(s); };

    // demo
    auto* d = app.add_subcommand("demo", "Full simulated pipeline at desk scale");
    d->add_option("--out", o_.demo.out, "output directory")->required();
    d->add_option("--spacing", o_.demo.spacing, "grid spacing (mm)")->check(CLI::PositiveNumber);
    d->add_option("--frames", o_.demo.frames, "frames per indentation")->check(CLI::PositiveNumber);
    d->add_option("--resolution", o_.demo.resolution, "desk or full");
    d->add_option("--fraction", o_.demo.fraction, "training fraction P");
    d->add_option("--epochs", o_.demo.epochs, "training epochs")->check(CLI::PositiveNumber);
    d->add_option("--indent", o_.demo.indent, "object indentation depth (mm)");
    d->add_option("--noise", o_.demo.noise, "sensor noise sigma")->check(CLI::NonNegativeNumber);
    d->add_option("--seed", o_.demo.seed, "capture and object seed");
    o_.demo.t.add_to(d);
    handlers_["demo"] = [this](const CLI::App& s) { cmd_demo(s); };
  }

  // ----------------------------------------------------------- commands

  void cmd_plan(const CLI::App& s) {
    const auto& o = o_.plan;
    const auto p = plan::generate_grid(parse_extent(o.extent), o.spacing, o.depth, o.frames);
    write_text_file(o.out, plan::write_plan_csv(p));
    auto m = manifest(s);
    m.outputs.push_back(o.out);
    if (!o.split_out.empty()) {
      const auto split = plan::split_plan(p, o.fraction, o.seed, o.holdout_seed);
      write_text_file(o.split_out, plan::write_split_csv(split));
      m.outputs.push_back(o.split_out);
      m.seeds["split"] = o.seed;
      m.seeds["holdout"] = o.holdout_seed;
    }
    write_manifest(m, o.out, false);
    out_ << "plan: " << p.size() << " points (" << plan::grid_count(p.extent.width_mm, o.spacing) << " x "
         << plan::grid_count(p.extent.height_mm, o.spacing) << ") -> " << o.out << '\n';
  }

  void cmd_gcode(const CLI::App& s) {
    const auto p = plan::read_plan_csv(read_text_file(o_.gcode.plan));
    const auto prog = gcode::plan_to_gcode(p, o_.machine.config());
    write_text_file(o_.gcode.out, gcode::render_program(prog));
    auto m = manifest(s);
    m.inputs.push_back(o_.gcode.plan);
    m.outputs.push_back(o_.gcode.out);
    write_manifest(m, o_.gcode.out, false);
    out_ << "gcode: " << prog.size() << " commands for " << p.size() << " points -> " << o_.gcode.out << '\n';
  }

  void cmd_probe(const CLI::App& s) {
    const auto& o = o_.probe;
    if (o.plan.empty() == o.gcode.empty()) throw ValidationError("probe needs exactly one of --plan or --gcode");
    if (!o.is_virtual && o.port.empty()) throw ValidationError("probe needs --virtual or --port");
    const auto cfg = o_.machine.config();
    const std::string input = o.plan.empty() ? o.gcode : o.plan;
    const auto program = o.plan.empty() ? gcode::parse_gcode(read_text_file(o.gcode))
                                        : gcode::plan_to_gcode(plan::read_plan_csv(read_text_file(o.plan)), cfg);

    std::vector<gcode::ProbeEvent> events;
    if (o.is_virtual) {
      events = gcode::virtual_execute(program, o.frames, cfg).events;
    } else {
      gcode::SerialPortTransport port(o.port, o.baud);
      gcode::SerialRunOptions so;
      so.frames_per_indent = o.frames;
      so.printer = cfg;
      so.ack_timeout = std::chrono::milliseconds(o.ack_timeout_ms);
      so.on_event = [&](const gcode::ProbeEvent& ev) {
        out_ << "event " << ev.plan_index << " at (" << text::format_double(ev.achieved.x) << ", "
             << text::format_double(ev.achieved.y) << ", " << text::format_double(ev.achieved.z) << ")\n";
      };
      auto r = gcode::serial_run(program, port, so);
      if (r.status != gcode::RunStatus::completed) throw TransportError("serial run aborted");
      events = std::move(r.events);
    }

    fs::path outp = o.out;
    if (outp.empty()) outp = fs::path(input).replace_extension(".events.csv");
    write_text_file(outp, events_csv(events));
    auto m = manifest(s);
    m.inputs.push_back(input);
    m.outputs.push_back(outp.string());
    write_manifest(m, outp, false);
    out_ << "probe: " << events.size() << " events (" << (o.is_virtual ? "virtual" : o.port) << ") -> "
         << outp.string() << '\n';
  }

  void cmd_capture(const CLI::App& s) {
    const auto& o = o_.capture;
    const auto geo = parse_resolution(o.resolution);
    const auto p = plan::read_plan_csv(read_text_file(o.plan), o.frames);
    auto m = manifest(s);
    m.inputs.push_back(o.plan);
    plan::PlanSplit split;
    if (!o.split.empty()) {
      split = plan::read_split_csv(read_text_file(o.split), p.size());
      m.inputs.push_back(o.split);
    } else {
      split = plan::split_plan(p, o.fraction, o.split_seed, o.holdout_seed);
      m.seeds["split"] = o.split_seed;
      m.seeds["holdout"] = o.holdout_seed;
    }
    const auto illum = sim::default_illumination(geo, o.noise);
    data::SimulatedSensor backend(geo, illum, o.probe_radius);
    data::CaptureConfig cc;
    cc.geometry = geo;
    cc.probe_radius_mm = o.probe_radius;
    cc.printer = o_.machine.config();
    const auto ds = data::capture(p, split, backend, cc, o.seed);
    data::save_dataset(ds, o.out);
    sim::save_illumination(fs::path(o.out) / "illumination", illum);
    m.seeds["capture"] = o.seed;
    m.outputs.push_back(o.out);
    write_manifest(m, o.out, true);
    out_ << "capture-sim: " << ds.samples.size() << " frames (" << p.size() << " points x " << o.frames << ") at "
         << geo.cols << "x" << geo.rows << " -> " << o.out << '\n';
  }

  void cmd_train(const CLI::App& s) {
    const auto& o = o_.train;
    const auto ds = data::load_dataset(o.data);
    auto model = net::make_model(parse_widths(o.t.widths, o.t.dropout), o.t.init_seed);
    auto tc = o.t.config(o.epochs);
    tc.on_epoch = [&](const net::EpochReport& r) {
      out_ << "epoch " << r.epoch + 1 << "/" << o.epochs << " train " << text::format_double(r.train_mse);
      if (!std::isnan(r.val_mse)) out_ << " val " << text::format_double(r.val_mse);
      out_ << '\n' << std::flush;
    };
    const auto res = net::train(std::move(model), ds, ds.split, tc);
    net::save_checkpoint(o.out, res.model);
    const fs::path hist = o.history.empty() ? fs::path(o.out + ".history.csv") : fs::path(o.history);
    const fs::path plot = fs::path(hist).replace_extension(".png");
    write_text_file(hist, history_csv(res.history));
    save_png(plot, history_plot(res.history, "training loss"));
    auto m = manifest(s);
    m.inputs.push_back(o.data);
    m.outputs = {o.out, hist.string(), plot.string()};
    m.seeds["init"] = o.t.init_seed;
    m.seeds["train"] = o.t.train_seed;
    write_manifest(m, o.out, false);
  }

  void cmd_ablate(const CLI::App& s) {
    const auto& o = o_.ablate;
    const auto ds = data::load_dataset(o.data);
    eval::AblationConfig cfg;
    cfg.network = parse_widths(o.t.widths, o.t.dropout);
    cfg.init_seed = o.t.init_seed;
    cfg.train = o.t.config(1);
    cfg.base_epochs = o.base_epochs;
    cfg.pooled_t = o.pooled;
    cfg.fov_filter = !o.no_fov_filter;
    cfg.threads = o.parallel_runs;
    cfg.on_epoch = [&](double P, std::uint64_t seed, const net::EpochReport& r) {
      out_ << "P=" << text::format_double(P) << " seed=" << seed << " epoch " << r.epoch + 1 << " train "
           << text::format_double(r.train_mse) << '\n'
           << std::flush;
    };
    const auto rep = eval::run_ablation(ds, o.fractions, o.seeds, cfg);
    const auto summary = report::write_ablation_report(rep, ds.plan, o.out);
    auto m = manifest(s);
    m.inputs.push_back(o.data);
    m.outputs.push_back(o.out);
    m.seeds["init"] = o.t.init_seed;
    m.seeds["train"] = o.t.train_seed;
    for (std::size_t k = 0; k < o.seeds.size(); ++k) m.seeds["subset." + std::to_string(k)] = o.seeds[k];
    write_manifest(m, o.out, true);
    out_ << summary;
  }

  void cmd_infer(const CLI::App& s) {
    const auto& o = o_.infer;
    const auto model = net::load_checkpoint(o.model);
    const auto img = load_png(o.image);
    const auto geo = geometry_with_pitch(img.rows, img.cols, o.pitch);
    const auto grad = net::predict(model, img);
    const auto depth = poisson::integrate(grad, geo.pitch_mm);
    save_grid(o.out, to_grid(depth));
    auto m = manifest(s);
    m.inputs = {o.model, o.image};
    m.outputs.push_back(o.out);
    if (!o.gradients.empty()) {
      save_grid(o.gradients, to_grid(grad));
      m.outputs.push_back(o.gradients);
    }
    write_manifest(m, o.out, false);
    out_ << "infer: " << img.cols << "x" << img.rows << " max depth "
         << text::format_double(max_value(depth.values)) << " mm -> " << o.out << '\n';
  }

  void cmd_eval(const CLI::App& s) {
    const auto& o = o_.eval;
    const auto pg = load_grid(o.pred);
    const auto geo = geometry_with_pitch(pg.rows, pg.cols, o.pitch);
    const auto pred = depth_from_grid(pg, geo.pitch_mm);
    auto m = manifest(s);
    m.inputs.push_back(o.pred);

    DepthMap gt;
    std::string name = o.name;
    if (!o.gt.empty()) {
      gt = depth_from_grid(load_grid(o.gt), geo.pitch_mm);
      m.inputs.push_back(o.gt);
      if (name.empty()) name = fs::path(o.gt).stem().string();
    } else if (!o.object.empty() || !o.stl.empty()) {
      mesh::TriangleMesh obj;
      if (!o.stl.empty()) {
        obj = mesh::load_stl(o.stl);
        m.inputs.push_back(o.stl);
        if (name.empty()) name = fs::path(o.stl).stem().string();
      } else {
        bool found = false;
        for (auto& nm : pipeline::standard_objects()) {
          if (nm.name == o.object) {
            obj = std::move(nm.mesh);
            found = true;
          }
        }
        if (!found) throw ValidationError("unknown object '" + o.object + "' (pill, pawn, hemispheres)");
        if (name.empty()) name = o.object;
      }
      gt = pipeline::press_object(obj, geo, sim::default_illumination(geo, 0.0), o.indent, 0).ground_truth;
    } else {
      throw ValidationError("eval needs one of --gt, --object or --stl");
    }
    auto ev = eval::evaluate_object(pred, gt, parse_adjust(o.adjust), !o.no_clamp);
    const auto summary = report::write_object_report({{name, std::move(ev), pred}}, o.out);
    m.outputs.push_back(o.out);
    write_manifest(m, o.out, true);
    out_ << summary;
  }

  void cmd_demo(const CLI::App& s) {
    const auto& o = o_.demo;
    pipeline::CalibrationConfig cfg;
    cfg.spacing_mm = o.spacing;
    cfg.frames_per_indent = o.frames;
    cfg.geometry = parse_resolution(o.resolution);
    cfg.noise_sigma = o.noise;
    cfg.fraction_P = o.fraction;
    cfg.split_seed = o.seed;
    cfg.capture_seed = o.seed;
    cfg.object_seed = o.seed;
    cfg.init_seed = o.t.init_seed;
    cfg.network = parse_widths(o.t.widths, o.t.dropout);
    cfg.train = o.t.config(o.epochs);
    cfg.object_indent_mm = o.indent;
    cfg.on_stage = [&](const std::string& msg) { out_ << msg << '\n' << std::flush; };
    cfg.train.on_epoch = [&](const net::EpochReport& r) {
      out_ << "epoch " << r.epoch + 1 << "/" << o.epochs << " train " << text::format_double(r.train_mse);
      if (!std::isnan(r.val_mse)) out_ << " val " << text::format_double(r.val_mse);
      out_ << '\n' << std::flush;
    };
    const auto r = pipeline::run_calibration(cfg);

    const fs::path dir = o.out;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    write_text_file(dir / "plan.csv", plan::write_plan_csv(r.plan));
    write_text_file(dir / "probe.gcode", gcode::render_program(r.program));
    write_text_file(dir / "events.csv", events_csv(r.events));
    data::save_dataset(r.dataset, dir / "dataset");
    sim::save_illumination(dir / "dataset" / "illumination", r.illumination);
    net::save_checkpoint(dir / "model.ckpt", r.trained.model);
    write_text_file(dir / "loss.csv", history_csv(r.trained.history));
    save_png(dir / "loss.png", history_plot(r.trained.history, "training loss"));
    const auto objects = report::write_object_report(r.objects, dir / "objects");

    std::ostringstream sum;
    sum << "untrained_val_mse = " << text::format_double(r.baseline_val_mse) << '\n'
        << "final_val_mse = " << text::format_double(r.final_val_mse()) << '\n'
        << "val_ratio = " << text::format_double(r.final_val_mse() / r.baseline_val_mse) << '\n';
    for (const auto& ob : r.objects) {
      sum << ob.name << "_overall_um = " << text::format_double(ob.eval.report.overall_um) << '\n';
    }
    write_text_file(dir / "summary.txt", sum.str());

    auto m = manifest(s);
    m.outputs = {"plan.csv", "probe.gcode", "events.csv", "dataset", "model.ckpt", "loss.csv", "loss.png",
                 "objects",  "summary.txt"};
    m.seeds["capture"] = o.seed;
    m.seeds["split"] = o.seed;
    m.seeds["holdout"] = cfg.holdout_seed;
    m.seeds["init"] = o.t.init_seed;
    m.seeds["train"] = o.t.train_seed;
    write_manifest(m, dir, true);
    out_ << sum.str() << objects;
  }

  std::ostream& out_;
  std::ostream& err_;
  Options o_;
  std::map<std::string, std::function<void(const CLI::App&)>> handlers_;
};

/// Parses argv, runs one subcommand and maps failures to exit codes:
/// 1 for usage, parse and validation errors, 2 for I/O and format errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Runner r(out, err);
  return r.run(argc, argv);
}

}  // namespace tactile_cal::cli
