#pragma once

#include <fcntl.h>
#include <poll.h>
#include <termios.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <functional>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tactile_cal/core/error.hpp"
#include "tactile_cal/gcode.hpp"
#include "tactile_cal/printer.hpp"

namespace tactile_cal::gcode {

/// Newline-delimited command channel to a printer.
class LineTransport {
 public:
  virtual ~LineTransport() = default;
  virtual void send_line(std::string_view line) = 0;
  /// Next received line without its terminator, or nullopt if nothing arrived
  /// within `timeout` (or the channel closed).
  virtual std::optional<std::string> read_line(std::chrono::milliseconds timeout) = 0;
  [[nodiscard]] virtual bool is_open() const = 0;
};

enum class RunStatus { completed, aborted };

struct SerialRunOptions {
  std::size_t frames_per_indent = 1;
  ProbeRunConfig printer;
  std::chrono::milliseconds ack_timeout{30000};
  std::function<void(const ProbeEvent&)> on_event;  // called after the M400 "ok"
  std::stop_token stop;
};

struct SerialRunResult {
  RunStatus status = RunStatus::completed;
  std::vector<ProbeEvent> events;
  std::size_t commands_acknowledged = 0;
};

/// Sends commands one at a time and waits for an "ok" line after each. A
/// shadow interpreter tracks the acknowledged position, so events match
/// virtual_execute on the same program. Abort is checked between commands.
inline SerialRunResult serial_run(const std::vector<GCodeCommand>& program, LineTransport& transport,
                                  const SerialRunOptions& opt) {
  using clock = std::chrono::steady_clock;
  VirtualPrinter shadow(opt.frames_per_indent, opt.printer);
  SerialRunResult r;
  for (const auto& cmd : program) {
    if (opt.stop.stop_requested() || !transport.is_open()) {
      r.status = RunStatus::aborted;
      return r;
    }
    transport.send_line(render(cmd));
    const auto deadline = clock::now() + opt.ack_timeout;
    for (;;) {
      const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - clock::now());  // never cut short
      if (left.count() <= 0) throw TransportError("timed out waiting for 'ok' after '" + render(cmd) + "'");
      auto line = transport.read_line(left);
      if (!line) {
        if (!transport.is_open()) {
          r.status = RunStatus::aborted;
          return r;
        }
        continue;
      }
      const std::string_view l = text::trim(*line);
      if (l.starts_with("ok")) break;
      if (l.starts_with("Error") || l.starts_with("!!")) {
        throw ProtocolError("printer reported '" + std::string(l) + "' for '" + render(cmd) + "'");
      }
      // busy/echo/temperature chatter: keep waiting
    }
    ++r.commands_acknowledged;
    if (auto ev = shadow.step(cmd)) {
      if (opt.on_event) opt.on_event(*ev);
      r.events.push_back(std::move(*ev));
    }
  }
  return r;
}

/// POSIX serial port (or pty) in raw 8N1 mode.
class SerialPortTransport final : public LineTransport {
 public:
  SerialPortTransport(const std::string& device, unsigned baud) {
    const speed_t speed = speed_of(baud);
    fd_ = ::open(device.c_str(), O_RDWR | O_NOCTTY | O_NONBLOCK);
    if (fd_ < 0) throw IoError("cannot open " + device + ": " + std::strerror(errno));
    termios tio{};
    if (::tcgetattr(fd_, &tio) != 0) {
      close_fd();
      throw IoError("tcgetattr failed on " + device);
    }
    ::cfmakeraw(&tio);
    tio.c_cflag |= CLOCAL | CREAD;
    tio.c_cflag &= ~static_cast<tcflag_t>(CSTOPB | PARENB);
    ::cfsetispeed(&tio, speed);
    ::cfsetospeed(&tio, speed);
    if (::tcsetattr(fd_, TCSANOW, &tio) != 0) {
      close_fd();
      throw IoError("tcsetattr failed on " + device);
    }
  }

  SerialPortTransport(const SerialPortTransport&) = delete;
  SerialPortTransport& operator=(const SerialPortTransport&) = delete;
  ~SerialPortTransport() override { close_fd(); }

  void send_line(std::string_view line) override {
    std::string buf(line);
    buf += '\n';
    std::size_t off = 0;
    while (off < buf.size()) {
      const auto n = ::write(fd_, buf.data() + off, buf.size() - off);
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) {
          pollfd p{fd_, POLLOUT, 0};
          ::poll(&p, 1, 100);
          continue;
        }
        throw TransportError(std::string("serial write failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> read_line(std::chrono::milliseconds timeout) override {
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + timeout;
    for (;;) {
      if (const auto nl = pending_.find('\n'); nl != std::string::npos) {
        std::string line = pending_.substr(0, nl);
        pending_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (!open_) return std::nullopt;
      const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - clock::now());  // never cut short
      if (left.count() <= 0) return std::nullopt;
      pollfd p{fd_, POLLIN, 0};
      const int rc = ::poll(&p, 1, static_cast<int>(left.count()));
      if (rc < 0 && errno != EINTR) throw TransportError("poll failed");
      if (rc <= 0) continue;
      if (p.revents & (POLLHUP | POLLERR)) {
        if (!(p.revents & POLLIN)) {
          open_ = false;
          continue;
        }
      }
      char buf[256];
      const auto n = ::read(fd_, buf, sizeof buf);
      if (n > 0) {
        pending_.append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || (errno != EAGAIN && errno != EINTR)) {
        open_ = false;
      }
    }
  }

  [[nodiscard]] bool is_open() const override { return open_; }

  static speed_t speed_of(unsigned baud) {
    switch (baud) {
      case 9600: return B9600;
      case 19200: return B19200;
      case 38400: return B38400;
      case 57600: return B57600;
      case 115200: return B115200;
      case 230400: return B230400;
      case 460800: return B460800;
      case 500000: return B500000;
      case 921600: return B921600;
      case 1000000: return B1000000;
      default: throw InvalidArgument("unsupported baud rate " + std::to_string(baud));
    }
  }

 private:
  void close_fd() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
    open_ = false;
  }

  int fd_ = -1;
  bool open_ = true;
  std::string pending_;
};

}  // namespace tactile_cal::gcode
