#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/gcode.hpp"
#include "tactile_cal/probe_plan.hpp"

namespace tactile_cal::gcode {

struct PrinterState {
  Vec3 position;
  bool homed = false;
  bool absolute_mode = true;
  double feed_mm_per_min = 0.0;

  bool operator==(const PrinterState&) const = default;
};

/// One completed plunge: the printer reached a barrier while in contact.
struct ProbeEvent {
  std::size_t plan_index = 0;
  plan::ProbePoint commanded;
  Vec3 achieved;
  std::vector<std::size_t> frame_indices;

  bool operator==(const ProbeEvent&) const = default;
};

/// Deterministic interpreter for the supported opcode subset. An M400 executed
/// at or below z_touch emits a ProbeEvent; other barriers are no-ops.
class VirtualPrinter {
 public:
  VirtualPrinter(std::size_t frames_per_indent, const ProbeRunConfig& cfg)
      : frames_(frames_per_indent), cfg_(cfg) {
    if (frames_ < 1) throw InvalidArgument("frames_per_indent must be >= 1");
  }

  std::optional<ProbeEvent> step(const GCodeCommand& c) {
    switch (c.opcode) {
      case Opcode::G28:
        state_.position = {};
        state_.homed = true;
        return std::nullopt;
      case Opcode::G90:
        state_.absolute_mode = true;
        return std::nullopt;
      case Opcode::G91:
        state_.absolute_mode = false;
        return std::nullopt;
      case Opcode::G0:
      case Opcode::G1:
        motion(c);
        return std::nullopt;
      case Opcode::M400:
        return barrier();
    }
    return std::nullopt;
  }

  [[nodiscard]] const PrinterState& state() const noexcept { return state_; }
  [[nodiscard]] std::size_t events_emitted() const noexcept { return events_; }

 private:
  void motion(const GCodeCommand& c) {
    if (!state_.homed) throw ProtocolError("motion command before homing (G28)");
    Vec3 target = state_.position;
    auto apply = [&](Axis a, double& coord) {
      if (const auto& v = c[a]) coord = state_.absolute_mode ? *v : coord + *v;
    };
    apply(Axis::X, target.x);
    apply(Axis::Y, target.y);
    apply(Axis::Z, target.z);
    const auto& lim = cfg_.machine_limits;
    if (target.x < 0.0 || target.x > lim.x || target.y < 0.0 || target.y > lim.y || target.z < 0.0 ||
        target.z > lim.z) {
      throw RangeError("move to (" + text::format_double(target.x) + ", " + text::format_double(target.y) + ", " +
                       text::format_double(target.z) + ") exceeds the travel limits");
    }
    if (const auto& f = c[Axis::F]) state_.feed_mm_per_min = *f;
    state_.position = target;
  }

  std::optional<ProbeEvent> barrier() {
    if (!state_.homed || state_.position.z > cfg_.z_touch_mm) return std::nullopt;
    ProbeEvent ev;
    ev.plan_index = events_;
    ev.achieved = state_.position;
    ev.commanded = {state_.position.x, state_.position.y, cfg_.z_touch_mm - state_.position.z};
    ev.frame_indices.resize(frames_);
    for (std::size_t k = 0; k < frames_; ++k) ev.frame_indices[k] = events_ * frames_ + k;
    ++events_;
    return ev;
  }

  std::size_t frames_;
  ProbeRunConfig cfg_;
  PrinterState state_;
  std::size_t events_ = 0;
};

struct ExecutionResult {
  PrinterState final_state;
  std::vector<ProbeEvent> events;
};

inline ExecutionResult virtual_execute(const std::vector<GCodeCommand>& program, std::size_t frames_per_indent,
                                       const ProbeRunConfig& cfg = {}) {
  VirtualPrinter printer(frames_per_indent, cfg);
  ExecutionResult r;
  for (const auto& c : program) {
    if (auto ev = printer.step(c)) r.events.push_back(std::move(*ev));
  }
  r.final_state = printer.state();
  return r;
}

}  // namespace tactile_cal::gcode
