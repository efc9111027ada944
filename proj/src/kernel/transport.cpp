#include "repro_lens/kernel/transport.hpp"

#include <poll.h>

#include <array>
#include <stdexcept>

namespace repro_lens::kernel {

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::Shell: return "shell";
    case Channel::Control: return "control";
    case Channel::Stdin: return "stdin";
    case Channel::IOPub: return "iopub";
  }
  return "shell";
}

std::unique_ptr<ZmtpTransport> ZmtpTransport::connect(const ConnectionInfo& info,
                                                      std::chrono::milliseconds timeout) {
  if (info.transport != "tcp") throw std::runtime_error("only tcp transport is supported");
  auto deadline = std::chrono::steady_clock::now() + timeout;
  auto left = [&] {
    return std::max(std::chrono::milliseconds(1),
                    std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - std::chrono::steady_clock::now()));
  };
  auto iopub = ZmtpSocket::connect(ZmtpSocket::Type::Sub, info.ip, info.iopub_port, left());
  auto shell = ZmtpSocket::connect(ZmtpSocket::Type::Dealer, info.ip, info.shell_port, left());
  auto control = ZmtpSocket::connect(ZmtpSocket::Type::Dealer, info.ip, info.control_port, left());
  auto stdin_sock = ZmtpSocket::connect(ZmtpSocket::Type::Dealer, info.ip, info.stdin_port, left());
  auto hb = ZmtpSocket::connect(ZmtpSocket::Type::Req, info.ip, info.hb_port, left());
  return std::unique_ptr<ZmtpTransport>(new ZmtpTransport(
      std::move(shell), std::move(control), std::move(stdin_sock), std::move(iopub), std::move(hb)));
}

ZmtpTransport::ZmtpTransport(ZmtpSocket shell, ZmtpSocket control, ZmtpSocket stdin_sock,
                             ZmtpSocket iopub, ZmtpSocket hb)
    : shell_(std::move(shell)),
      control_(std::move(control)),
      stdin_(std::move(stdin_sock)),
      iopub_(std::move(iopub)),
      hb_(std::move(hb)) {}

ZmtpSocket& ZmtpTransport::socket_for(Channel c) {
  switch (c) {
    case Channel::Shell: return shell_;
    case Channel::Control: return control_;
    case Channel::Stdin: return stdin_;
    case Channel::IOPub: return iopub_;
  }
  return shell_;
}

void ZmtpTransport::send(Channel channel, const std::vector<std::string>& frames) {
  if (closed_) throw std::runtime_error("transport closed");
  if (channel == Channel::IOPub) throw std::logic_error("iopub is receive-only");
  socket_for(channel).send(frames);
}

std::optional<ChannelMessage> ZmtpTransport::receive(std::chrono::milliseconds timeout) {
  if (closed_) throw std::runtime_error("transport closed");
  constexpr std::array<Channel, 4> order = {Channel::Shell, Channel::Control, Channel::Stdin,
                                            Channel::IOPub};
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    for (Channel c : order) {
      if (auto m = socket_for(c).next_message()) return ChannelMessage{c, std::move(*m)};
    }
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) return std::nullopt;
    std::array<pollfd, 4> fds{};
    for (std::size_t i = 0; i < order.size(); ++i) fds[i] = {socket_for(order[i]).fd(), POLLIN, 0};
    int pr = ::poll(fds.data(), fds.size(), static_cast<int>(remaining.count()));
    if (pr <= 0) continue;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) {
        if (!socket_for(order[i]).read_available()) {
          throw std::runtime_error(std::string("kernel closed the ") +
                                   std::string(to_string(order[i])) + " channel");
        }
      }
    }
  }
}

bool ZmtpTransport::ping(std::chrono::milliseconds timeout) {
  if (closed_) return false;
  try {
    hb_.send({"ping"});
    auto reply = hb_.receive(timeout);
    return reply.has_value();
  } catch (const std::exception&) {
    return false;
  }
}

void ZmtpTransport::close() {
  if (closed_) return;
  closed_ = true;
  for (auto* s : {&shell_, &control_, &stdin_, &iopub_, &hb_}) s->shutdown();
}

}  // namespace repro_lens::kernel
