#include "repro_lens/kernel/zmtp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <thread>

namespace repro_lens::kernel {

namespace {

constexpr unsigned char kMore = 0x01;
constexpr unsigned char kLong = 0x02;
constexpr unsigned char kCommand = 0x04;

const char* socket_type_name(ZmtpSocket::Type t) {
  switch (t) {
    case ZmtpSocket::Type::Dealer: return "DEALER";
    case ZmtpSocket::Type::Sub: return "SUB";
    case ZmtpSocket::Type::Req: return "REQ";
  }
  return "DEALER";
}

std::string frame_header(unsigned char flags, std::size_t size) {
  std::string h;
  if (size <= 255) {
    h.push_back(static_cast<char>(flags));
    h.push_back(static_cast<char>(size));
  } else {
    h.push_back(static_cast<char>(flags | kLong));
    for (int shift = 56; shift >= 0; shift -= 8) {
      h.push_back(static_cast<char>((static_cast<std::uint64_t>(size) >> shift) & 0xff));
    }
  }
  return h;
}

std::string greeting() {
  std::string g(64, '\0');
  g[0] = static_cast<char>(0xff);
  g[9] = 0x7f;
  g[10] = 3;  // major
  g[11] = 0;  // minor: 3.0 framing, message-based subscriptions
  std::memcpy(&g[12], "NULL", 4);
  g[32] = 0;  // as-server
  return g;
}

}  // namespace

ZmtpSocket ZmtpSocket::connect(Type type, const std::string& ip, int port,
                               std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (inet_pton(AF_INET, ip.c_str(), &addr.sin_addr) != 1) {
    throw std::runtime_error("invalid kernel ip " + ip);
  }
  for (;;) {
    int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0) {
      int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ZmtpSocket s(type, fd);
      s.handshake(std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now()));
      return s;
    }
    int err = errno;
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline) {
      throw std::runtime_error("connect to " + ip + ":" + std::to_string(port) +
                               " failed: " + std::strerror(err));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

ZmtpSocket::ZmtpSocket(ZmtpSocket&& other) noexcept
    : type_(other.type_),
      fd_(other.fd_),
      inbuf_(std::move(other.inbuf_)),
      partial_(std::move(other.partial_)),
      ready_(std::move(other.ready_)) {
  other.fd_ = -1;
}

ZmtpSocket& ZmtpSocket::operator=(ZmtpSocket&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    type_ = other.type_;
    fd_ = other.fd_;
    inbuf_ = std::move(other.inbuf_);
    partial_ = std::move(other.partial_);
    ready_ = std::move(other.ready_);
    other.fd_ = -1;
  }
  return *this;
}

ZmtpSocket::~ZmtpSocket() {
  if (fd_ >= 0) ::close(fd_);
}

void ZmtpSocket::write_all(const std::string& bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("zmtp send: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

void ZmtpSocket::read_exact(std::string& out, std::size_t n,
                            std::chrono::steady_clock::time_point deadline) {
  out.clear();
  char buf[256];
  while (out.size() < n) {
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) throw std::runtime_error("zmtp handshake timed out");
    pollfd pfd{fd_, POLLIN, 0};
    int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (pr < 0 && errno == EINTR) continue;
    if (pr <= 0) continue;
    ssize_t got = ::recv(fd_, buf, std::min(sizeof buf, n - out.size()), 0);
    if (got == 0) throw std::runtime_error("zmtp peer closed during handshake");
    if (got < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("zmtp recv: ") + std::strerror(errno));
    }
    out.append(buf, static_cast<std::size_t>(got));
  }
}

void ZmtpSocket::send_command(const std::string& body) {
  std::lock_guard lock(write_mu_);
  write_all(frame_header(kCommand, body.size()) + body);
}

void ZmtpSocket::handshake(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  write_all(greeting());
  std::string peer;
  read_exact(peer, 64, deadline);
  if (static_cast<unsigned char>(peer[0]) != 0xff || (peer[9] & 0x01) == 0) {
    throw std::runtime_error("peer is not a ZMTP endpoint");
  }
  if (peer[10] < 3) throw std::runtime_error("peer speaks ZMTP < 3.0");
  if (peer.compare(12, 4, "NULL") != 0) throw std::runtime_error("peer requires a security mechanism");

  std::string ready = "\x05READY";
  const std::string prop = "Socket-Type";
  const std::string value = socket_type_name(type_);
  ready.push_back(static_cast<char>(prop.size()));
  ready += prop;
  for (int shift = 24; shift >= 0; shift -= 8) {
    ready.push_back(static_cast<char>((value.size() >> shift) & 0xff));
  }
  ready += value;
  send_command(ready);

  // Peer READY: one command frame.
  std::string head;
  read_exact(head, 2, deadline);
  auto flags = static_cast<unsigned char>(head[0]);
  std::uint64_t size = static_cast<unsigned char>(head[1]);
  if (flags & kLong) {
    std::string rest;
    read_exact(rest, 7, deadline);
    std::string all = head.substr(1) + rest;
    size = 0;
    for (unsigned char c : all) size = (size << 8) | c;
  }
  if (!(flags & kCommand)) throw std::runtime_error("expected READY command from peer");
  std::string body;
  read_exact(body, static_cast<std::size_t>(size), deadline);
  if (body.size() < 6 || body.compare(0, 6, "\x05READY") != 0) {
    std::string reason = body.size() > 6 && body.compare(0, 6, "\x05""ERROR") == 0
                             ? body.substr(7)
                             : std::string("unexpected command");
    throw std::runtime_error("zmtp handshake rejected: " + reason);
  }
  if (type_ == Type::Sub) subscribe_all();
}

void ZmtpSocket::subscribe_all() {
  // ZMTP 3.0 subscriptions are ordinary messages: 0x01 followed by the prefix.
  std::lock_guard lock(write_mu_);
  write_all(frame_header(0, 1) + std::string("\x01", 1));
}

void ZmtpSocket::send(const std::vector<std::string>& frames) {
  std::vector<std::string> out;
  if (type_ == Type::Req) out.emplace_back();
  out.insert(out.end(), frames.begin(), frames.end());
  std::string wire;
  for (std::size_t i = 0; i < out.size(); ++i) {
    unsigned char flags = (i + 1 < out.size()) ? kMore : 0;
    wire += frame_header(flags, out[i].size());
    wire += out[i];
  }
  std::lock_guard lock(write_mu_);
  write_all(wire);
}

void ZmtpSocket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

bool ZmtpSocket::read_available() {
  char buf[65536];
  for (;;) {
    ssize_t got = ::recv(fd_, buf, sizeof buf, MSG_DONTWAIT);
    if (got > 0) {
      inbuf_.append(buf, static_cast<std::size_t>(got));
      continue;
    }
    if (got == 0) {
      parse_frames();
      return false;
    }
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == EWOULDBLOCK) break;
    parse_frames();
    return false;
  }
  return parse_frames();
}

bool ZmtpSocket::parse_frames() {
  std::size_t off = 0;
  for (;;) {
    if (inbuf_.size() - off < 2) break;
    auto flags = static_cast<unsigned char>(inbuf_[off]);
    std::size_t header = 2;
    std::uint64_t size = static_cast<unsigned char>(inbuf_[off + 1]);
    if (flags & kLong) {
      header = 9;
      if (inbuf_.size() - off < header) break;
      size = 0;
      for (std::size_t i = 1; i < 9; ++i) size = (size << 8) | static_cast<unsigned char>(inbuf_[off + i]);
    }
    if (inbuf_.size() - off < header + size) break;
    std::string body = inbuf_.substr(off + header, static_cast<std::size_t>(size));
    off += header + static_cast<std::size_t>(size);
    if (flags & kCommand) continue;  // PING and friends are not used at 3.0
    partial_.push_back(std::move(body));
    if (!(flags & kMore)) {
      if (type_ == Type::Req && !partial_.empty() && partial_.front().empty()) {
        partial_.erase(partial_.begin());
      }
      ready_.push_back(std::move(partial_));
      partial_.clear();
    }
  }
  inbuf_.erase(0, off);
  return true;
}

std::optional<std::vector<std::string>> ZmtpSocket::next_message() {
  if (ready_.empty()) return std::nullopt;
  auto msg = std::move(ready_.front());
  ready_.pop_front();
  return msg;
}

std::optional<std::vector<std::string>> ZmtpSocket::receive(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto m = next_message()) return m;
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) return std::nullopt;
    pollfd pfd{fd_, POLLIN, 0};
    int pr = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
    if (pr > 0 && !read_available()) {
      if (auto m = next_message()) return m;
      throw std::runtime_error("zmtp peer closed the connection");
    }
  }
}

}  // namespace repro_lens::kernel
