#pragma once

#include "repro_lens/kernel/wire.hpp"
#include "repro_lens/kernel/zmtp.hpp"

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace repro_lens::kernel {

enum class Channel { Shell, Control, Stdin, IOPub };

std::string_view to_string(Channel c);

struct ChannelMessage {
  Channel channel = Channel::Shell;
  std::vector<std::string> frames;
};

/// Moves raw multipart frames between the client and one kernel.
/// send() and ping() are called from the session owner; receive() from the
/// session's background receiver. Implementations must tolerate that split.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(Channel channel, const std::vector<std::string>& frames) = 0;
  /// Next inbound message on any channel, or nullopt on timeout.
  /// Throws std::runtime_error when the transport is broken.
  virtual std::optional<ChannelMessage> receive(std::chrono::milliseconds timeout) = 0;
  /// Heartbeat round-trip.
  virtual bool ping(std::chrono::milliseconds timeout) = 0;
  virtual void close() = 0;
};

/// Standard socket transport: DEALER shell/control/stdin, SUB iopub, REQ heartbeat.
class ZmtpTransport final : public Transport {
 public:
  static std::unique_ptr<ZmtpTransport> connect(const ConnectionInfo& info,
                                                std::chrono::milliseconds timeout);

  void send(Channel channel, const std::vector<std::string>& frames) override;
  std::optional<ChannelMessage> receive(std::chrono::milliseconds timeout) override;
  bool ping(std::chrono::milliseconds timeout) override;
  void close() override;

 private:
  ZmtpTransport(ZmtpSocket shell, ZmtpSocket control, ZmtpSocket stdin_sock, ZmtpSocket iopub,
                ZmtpSocket hb);
  ZmtpSocket& socket_for(Channel c);

  ZmtpSocket shell_, control_, stdin_, iopub_, hb_;
  bool closed_ = false;
};

}  // namespace repro_lens::kernel
