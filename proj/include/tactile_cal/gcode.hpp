#pragma once

#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/core/text.hpp"
#include "tactile_cal/probe_plan.hpp"

namespace tactile_cal::gcode {

enum class Opcode { G0, G1, G28, G90, G91, M400 };

enum class Axis : std::size_t { X = 0, Y = 1, Z = 2, F = 3 };

inline constexpr std::array<char, 4> kAxisLetters = {'X', 'Y', 'Z', 'F'};

struct GCodeCommand {
  Opcode opcode = Opcode::G0;
  std::array<std::optional<double>, 4> params{};

  [[nodiscard]] const std::optional<double>& operator[](Axis a) const { return params[static_cast<std::size_t>(a)]; }
  std::optional<double>& operator[](Axis a) { return params[static_cast<std::size_t>(a)]; }

  [[nodiscard]] bool is_motion() const noexcept { return opcode == Opcode::G0 || opcode == Opcode::G1; }

  bool operator==(const GCodeCommand&) const = default;
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  bool operator==(const Vec3&) const = default;
};

/// Probing-run parameters. Feeds in mm/min.
struct ProbeRunConfig {
  double z_touch_mm = 10.0;   // z at which the tip first touches the gel
  double travel_z_mm = 15.0;  // safe hop height
  double feed_travel = 3000.0;
  double feed_probe = 300.0;
  Vec3 machine_limits{220.0, 220.0, 250.0};

  void validate() const {
    if (!(travel_z_mm > z_touch_mm)) throw InvalidArgument("travel_z must exceed z_touch");
    if (!(feed_travel > 0.0) || !(feed_probe > 0.0)) throw InvalidArgument("feeds must be positive");
    if (!(machine_limits.x > 0.0) || !(machine_limits.y > 0.0) || !(machine_limits.z > 0.0)) {
      throw InvalidArgument("machine limits must be positive");
    }
    if (travel_z_mm > machine_limits.z) throw InvalidArgument("travel_z exceeds the z travel limit");
  }
};

inline GCodeCommand make(Opcode op) { return GCodeCommand{op, {}}; }

inline GCodeCommand move(Opcode op, std::optional<double> x, std::optional<double> y, std::optional<double> z,
                         std::optional<double> f = std::nullopt) {
  return GCodeCommand{op, {x, y, z, f}};
}

inline std::string_view opcode_name(Opcode op) {
  switch (op) {
    case Opcode::G0: return "G0";
    case Opcode::G1: return "G1";
    case Opcode::G28: return "G28";
    case Opcode::G90: return "G90";
    case Opcode::G91: return "G91";
    case Opcode::M400: return "M400";
  }
  return "?";
}

/// One command, no terminator. Numbers use the shortest exact representation
/// so parse(render(c)) == c bit for bit.
inline std::string render(const GCodeCommand& c) {
  std::string s(opcode_name(c.opcode));
  for (std::size_t i = 0; i < 4; ++i) {
    if (!c.params[i]) continue;
    s += ' ';
    s += kAxisLetters[i];
    s += text::format_double(*c.params[i]);
  }
  return s;
}

inline std::string render_program(const std::vector<GCodeCommand>& cmds) {
  std::string out;
  for (const auto& c : cmds) {
    out += render(c);
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string upper(std::string_view s) {
  std::string u(s);
  for (auto& ch : u) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return u;
}

inline std::optional<Opcode> opcode_from(std::string_view word) {
  if (word.size() < 2) return std::nullopt;
  std::uint64_t num = 0;
  if (!text::parse_u64(word.substr(1), num)) return std::nullopt;
  if (word[0] == 'G') {
    switch (num) {
      case 0: return Opcode::G0;
      case 1: return Opcode::G1;
      case 28: return Opcode::G28;
      case 90: return Opcode::G90;
      case 91: return Opcode::G91;
      default: return std::nullopt;
    }
  }
  if (word[0] == 'M' && num == 400) return Opcode::M400;
  return std::nullopt;
}

}  // namespace detail

/// Parses one command per line. ';' starts a comment; letters are
/// case-insensitive; blank lines are skipped.
inline std::vector<GCodeCommand> parse_gcode(std::string_view program) {
  std::vector<GCodeCommand> out;
  std::size_t line_no = 0;
  for (auto raw : text::lines(program)) {
    ++line_no;
    if (const auto semi = raw.find(';'); semi != std::string_view::npos) raw = raw.substr(0, semi);
    const std::string line = detail::upper(text::trim(raw));
    if (line.empty()) continue;

    std::vector<std::string_view> words;
    std::string_view rest = line;
    while (!rest.empty()) {
      const auto b = rest.find_first_not_of(" \t");
      if (b == std::string_view::npos) break;
      rest = rest.substr(b);
      const auto e = rest.find_first_of(" \t");
      words.push_back(rest.substr(0, e));
      rest = e == std::string_view::npos ? std::string_view{} : rest.substr(e);
    }

    const auto op = detail::opcode_from(words.front());
    if (!op) throw ParseError(line_no, "unknown opcode '" + std::string(words.front()) + "'");
    GCodeCommand cmd{*op, {}};
    for (std::size_t w = 1; w < words.size(); ++w) {
      const auto word = words[w];
      std::size_t slot = 4;
      for (std::size_t i = 0; i < 4; ++i) {
        if (word[0] == kAxisLetters[i]) slot = i;
      }
      if (slot == 4) throw ParseError(line_no, "unsupported parameter '" + std::string(word) + "'");
      if (cmd.params[slot]) throw ParseError(line_no, std::string("duplicate axis ") + kAxisLetters[slot]);
      double v = 0.0;
      if (!text::parse_double(word.substr(1), v)) {
        throw ParseError(line_no, "bad number in '" + std::string(word) + "'");
      }
      cmd.params[slot] = v;
    }
    if (!cmd.is_motion()) {
      for (const auto& p : cmd.params) {
        if (p) throw ParseError(line_no, std::string(opcode_name(cmd.opcode)) + " takes no parameters");
      }
    }
    if (cmd[Axis::F] && !(*cmd[Axis::F] > 0.0)) throw ParseError(line_no, "feed rate must be positive");
    out.push_back(cmd);
  }
  return out;
}

/// Probing program: G28, G90, lift to travel height, then per point a travel
/// move, a plunge to z_touch - depth, an M400 capture barrier and a retract.
inline std::vector<GCodeCommand> plan_to_gcode(const plan::ProbePlan& p, const ProbeRunConfig& cfg) {
  cfg.validate();
  std::vector<GCodeCommand> out;
  out.reserve(3 + 4 * p.points.size());
  out.push_back(make(Opcode::G28));
  out.push_back(make(Opcode::G90));
  if (p.points.empty()) return out;
  const auto& lim = cfg.machine_limits;
  for (std::size_t i = 0; i < p.points.size(); ++i) {
    const auto& q = p.points[i];
    const double plunge = cfg.z_touch_mm - q.depth_mm;
    if (q.x_mm < 0.0 || q.x_mm > lim.x || q.y_mm < 0.0 || q.y_mm > lim.y || plunge < 0.0 || plunge > lim.z) {
      throw RangeError("probe point " + std::to_string(i) + " is outside the machine limits");
    }
  }
  out.push_back(move(Opcode::G0, std::nullopt, std::nullopt, cfg.travel_z_mm, cfg.feed_travel));
  for (const auto& q : p.points) {
    out.push_back(move(Opcode::G0, q.x_mm, q.y_mm, std::nullopt, cfg.feed_travel));
    out.push_back(move(Opcode::G1, std::nullopt, std::nullopt, cfg.z_touch_mm - q.depth_mm, cfg.feed_probe));
    out.push_back(make(Opcode::M400));
    out.push_back(move(Opcode::G0, std::nullopt, std::nullopt, cfg.travel_z_mm, cfg.feed_travel));
  }
  return out;
}

}  // namespace tactile_cal::gcode
