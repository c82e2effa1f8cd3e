#include <catch2/catch_amalgamated.hpp>

#include <fcntl.h>
#include <stdlib.h>
#include <unistd.h>

#include <deque>
#include <thread>

#include "tactile_cal/core/rng.hpp"
#include "tactile_cal/gcode.hpp"
#include "tactile_cal/printer.hpp"
#include "tactile_cal/serial.hpp"

using namespace tactile_cal;
using namespace tactile_cal::gcode;

namespace {

std::size_t count_barriers(const std::string& program) {
  std::size_t n = 0;
  for (const auto& c : parse_gcode(program)) n += c.opcode == Opcode::M400;
  return n;
}

/// Replies "ok" to every line, optionally preceded by busy chatter.
class AckTransport final : public LineTransport {
 public:
  explicit AckTransport(bool chatter = false) : chatter_(chatter) {}
  void send_line(std::string_view line) override {
    sent.emplace_back(line);
    if (chatter_) replies_.push_back("echo:busy: processing");
    replies_.push_back("ok");
  }
  std::optional<std::string> read_line(std::chrono::milliseconds) override {
    if (replies_.empty()) return std::nullopt;
    auto l = replies_.front();
    replies_.pop_front();
    return l;
  }
  bool is_open() const override { return open; }

  std::vector<std::string> sent;
  bool open = true;

 private:
  bool chatter_;
  std::deque<std::string> replies_;
};

class SilentTransport final : public LineTransport {
 public:
  void send_line(std::string_view) override {}
  std::optional<std::string> read_line(std::chrono::milliseconds t) override {
    std::this_thread::sleep_for(std::min(t, std::chrono::milliseconds(5)));
    return std::nullopt;
  }
  bool is_open() const override { return true; }
};

/// Acknowledges `budget` lines and then reports the channel closed.
class ClosingTransport final : public LineTransport {
 public:
  explicit ClosingTransport(std::size_t budget) : budget_(budget) {}
  void send_line(std::string_view) override { ++sent_; }
  std::optional<std::string> read_line(std::chrono::milliseconds) override {
    if (sent_ > budget_) {
      open_ = false;
      return std::nullopt;
    }
    return "ok";
  }
  bool is_open() const override { return open_; }

 private:
  std::size_t budget_;
  std::size_t sent_ = 0;
  bool open_ = true;
};

plan::ProbePlan nine_point_plan() { return plan::generate_grid({1.0, 1.0}, 0.5, 0.8, 30); }

ProbeRunConfig offset_config() {
  ProbeRunConfig cfg;
  cfg.z_touch_mm = 10.0;
  cfg.travel_z_mm = 15.0;
  return cfg;
}

}  // namespace

TEST_CASE("parse handles the canonical examples", "[gcode][parse]") {
  const auto a = parse_gcode("G1 X5.0 Y5.0 F3000");
  REQUIRE(a.size() == 1);
  CHECK(a[0].opcode == Opcode::G1);
  CHECK(a[0][Axis::X] == 5.0);
  CHECK(a[0][Axis::Y] == 5.0);
  CHECK_FALSE(a[0][Axis::Z].has_value());
  CHECK(a[0][Axis::F] == 3000.0);

  const auto b = parse_gcode("G28 ; home");
  REQUIRE(b.size() == 1);
  CHECK(b[0] == make(Opcode::G28));

  const auto c = parse_gcode("g1 x-1.5 z2\n\n  m400  \n");
  REQUIRE(c.size() == 2);
  CHECK(c[0][Axis::X] == -1.5);
  CHECK(c[1].opcode == Opcode::M400);
}

TEST_CASE("parse errors name the line", "[gcode][parse]") {
  auto line_of = [](const std::string& prog) -> std::size_t {
    try {
      (void)parse_gcode(prog);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("G28\nG2 X1\n") == 2);
  CHECK(line_of("G28\nG90\nG1 X1 X2\n") == 3);
  CHECK(line_of("M104 S200\n") == 1);
  CHECK(line_of("G28 X0\n") == 1);
  CHECK(line_of("G1 X1 F0\n") == 1);
  CHECK(line_of("G1 E5\n") == 1);
  CHECK(line_of("G1 Xabc\n") == 1);
}

TEST_CASE("plan_to_gcode structure", "[gcode][generate]") {
  SECTION("single point plunges to z_touch - depth") {
    plan::ProbePlan p;
    p.points = {{5.0, 5.0, 0.8}};
    const auto prog = plan_to_gcode(p, offset_config());
    double plunge = -1;
    for (const auto& c : prog) {
      if (c.opcode == Opcode::G1 && c[Axis::Z]) plunge = *c[Axis::Z];
    }
    CHECK(plunge == 10.0 - 0.8);
    CHECK(plunge == Catch::Approx(9.2));
    CHECK(prog.front().opcode == Opcode::G28);
    CHECK(prog[1].opcode == Opcode::G90);
  }
  SECTION("empty plan is just home and absolute mode") {
    const auto prog = plan_to_gcode(plan::ProbePlan{}, offset_config());
    REQUIRE(prog.size() == 2);
    CHECK(prog[0].opcode == Opcode::G28);
    CHECK(prog[1].opcode == Opcode::G90);
  }
  SECTION("nine-point grid emits nine barriers") {
    CHECK(count_barriers(render_program(plan_to_gcode(nine_point_plan(), offset_config()))) == 9);
  }
  SECTION("points outside the machine limits are named") {
    plan::ProbePlan p;
    p.points = {{1, 1, 0.5}, {500, 1, 0.5}};
    CHECK_THROWS_WITH(plan_to_gcode(p, offset_config()), Catch::Matchers::ContainsSubstring("point 1"));
    ProbeRunConfig bad = offset_config();
    bad.travel_z_mm = 5.0;
    CHECK_THROWS_AS(plan_to_gcode(p, bad), InvalidArgument);
  }
}

TEST_CASE("render then parse is the identity", "[gcode][property]") {
  const auto big = plan_to_gcode(plan::generate_grid({16.0, 18.0}, 0.5, 1.0, 30), offset_config());
  CHECK(parse_gcode(render_program(big)) == big);

  Rng rng(11);
  const Opcode ops[] = {Opcode::G0, Opcode::G1, Opcode::G28, Opcode::G90, Opcode::G91, Opcode::M400};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GCodeCommand> prog;
    for (int i = 0; i < 50; ++i) {
      GCodeCommand c = make(ops[rng.index(6)]);
      if (c.is_motion()) {
        for (std::size_t a = 0; a < 3; ++a) {
          if (rng.index(2)) c.params[a] = rng.uniform(-300, 300);
        }
        if (rng.index(2)) c.params[3] = rng.uniform(1, 10000);
      }
      prog.push_back(c);
    }
    REQUIRE(parse_gcode(render_program(prog)) == prog);
  }
}

TEST_CASE("virtual execution of a probing program", "[gcode][virtual]") {
  const auto p = nine_point_plan();
  const auto cfg = offset_config();
  const auto r = virtual_execute(plan_to_gcode(p, cfg), p.frames_per_indent, cfg);
  REQUIRE(r.events.size() == 9);
  for (std::size_t i = 0; i < 9; ++i) {
    const auto& ev = r.events[i];
    CHECK(ev.plan_index == i);
    CHECK(ev.achieved.x == p.points[i].x_mm);
    CHECK(ev.achieved.y == p.points[i].y_mm);
    CHECK(ev.achieved.z == cfg.z_touch_mm - p.points[i].depth_mm);
    CHECK(ev.frame_indices.size() == 30);
    CHECK(ev.frame_indices.front() == 30 * i);
  }
  CHECK(r.final_state.position.z == cfg.travel_z_mm);
  CHECK(r.final_state.homed);

  // pure: a second run is identical
  const auto again = virtual_execute(plan_to_gcode(p, cfg), p.frames_per_indent, cfg);
  CHECK(again.events == r.events);
  CHECK(again.final_state == r.final_state);
}

TEST_CASE("virtual printer protocol and range errors", "[gcode][virtual]") {
  CHECK_THROWS_AS(virtual_execute(parse_gcode("G1 X5\nG28\n"), 1), ProtocolError);
  CHECK_THROWS_AS(virtual_execute(parse_gcode("G28\nG1 X500\n"), 1), RangeError);
  CHECK_THROWS_AS(virtual_execute(parse_gcode("G28\nG91\nG1 Z-1\n"), 1), RangeError);
}

TEST_CASE("relative addressing accumulates", "[gcode][virtual]") {
  const auto r = virtual_execute(parse_gcode("G28\nG91\nG1 X1\nG1 X1\nG1 X1\n"), 1);
  CHECK(r.final_state.position.x == 3.0);
  CHECK_FALSE(r.final_state.absolute_mode);
}

TEST_CASE("serial run with instant acknowledgements matches the virtual printer", "[gcode][serial]") {
  const auto p = nine_point_plan();
  const auto cfg = offset_config();
  const auto prog = plan_to_gcode(p, cfg);
  const auto oracle = virtual_execute(prog, p.frames_per_indent, cfg);
  for (bool chatter : {false, true}) {
    AckTransport t(chatter);
    std::size_t callbacks = 0;
    SerialRunOptions opt;
    opt.frames_per_indent = p.frames_per_indent;
    opt.printer = cfg;
    opt.on_event = [&](const ProbeEvent&) { ++callbacks; };
    const auto r = serial_run(prog, t, opt);
    CHECK(r.status == RunStatus::completed);
    CHECK(r.events == oracle.events);
    CHECK(callbacks == 9);
    CHECK(t.sent.size() == prog.size());
    CHECK(t.sent[0] == "G28");
  }
}

TEST_CASE("serial run times out when the printer never acknowledges", "[gcode][serial]") {
  SilentTransport t;
  SerialRunOptions opt;
  opt.ack_timeout = std::chrono::milliseconds(60);
  const auto start = std::chrono::steady_clock::now();
  CHECK_THROWS_AS(serial_run(parse_gcode("G28\n"), t, opt), TransportError);
  CHECK(std::chrono::steady_clock::now() - start >= std::chrono::milliseconds(60));
}

TEST_CASE("serial run abort after k events emits exactly k", "[gcode][serial]") {
  const auto p = nine_point_plan();
  const auto cfg = offset_config();
  for (std::size_t k : {1u, 4u, 9u}) {
    AckTransport t;
    std::stop_source stop;
    std::size_t seen = 0;
    SerialRunOptions opt;
    opt.frames_per_indent = 1;
    opt.printer = cfg;
    opt.stop = stop.get_token();
    opt.on_event = [&](const ProbeEvent&) {
      if (++seen == k) stop.request_stop();
    };
    const auto r = serial_run(plan_to_gcode(p, cfg), t, opt);
    CHECK(r.events.size() == k);
    CHECK(r.status == RunStatus::aborted);
  }
}

TEST_CASE("serial run reports aborted when the transport closes", "[gcode][serial]") {
  ClosingTransport t(3);
  SerialRunOptions opt;
  const auto r = serial_run(plan_to_gcode(nine_point_plan(), offset_config()), t, opt);
  CHECK(r.status == RunStatus::aborted);
  CHECK(r.commands_acknowledged == 3);
}

TEST_CASE("serial port transport over a pseudo-terminal", "[gcode][serial][pty]") {
  const int master = ::posix_openpt(O_RDWR | O_NOCTTY);
  REQUIRE(master >= 0);
  REQUIRE(::grantpt(master) == 0);
  REQUIRE(::unlockpt(master) == 0);
  const std::string slave = ::ptsname(master);

  const auto prog = plan_to_gcode(nine_point_plan(), offset_config());
  SerialPortTransport port(slave, 115200);
  std::vector<std::string> received;
  std::jthread printer([&] {
    std::string buf;
    char c;
    while (received.size() < prog.size() && ::read(master, &c, 1) == 1) {
      if (c == '\n') {
        received.push_back(buf);
        buf.clear();
        const char ok[] = "ok\r\n";
        if (::write(master, ok, sizeof ok - 1) < 0) break;
      } else {
        buf += c;
      }
    }
  });
  SerialRunOptions opt;
  opt.frames_per_indent = 30;
  opt.printer = offset_config();
  opt.ack_timeout = std::chrono::milliseconds(5000);
  const auto r = serial_run(prog, port, opt);
  printer.join();
  ::close(master);
  CHECK(r.status == RunStatus::completed);
  CHECK(r.events.size() == 9);
  REQUIRE(received.size() == prog.size());
  CHECK(received[0] == "G28");
  CHECK(received[3] == render(prog[3]));
  CHECK_THROWS_AS(SerialPortTransport(slave, 12345), InvalidArgument);
}
