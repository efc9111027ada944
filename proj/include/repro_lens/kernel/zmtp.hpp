#pragma once

#include <chrono>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace repro_lens::kernel {

/// Client-side ZMTP 3.0 peer over TCP with the NULL security mechanism. Only
/// the socket types a kernel client needs are supported.
class ZmtpSocket {
 public:
  enum class Type { Dealer, Sub, Req };

  /// Connects and completes the greeting/READY handshake, retrying refused
  /// connections until `timeout`. Throws std::runtime_error.
  static ZmtpSocket connect(Type type, const std::string& ip, int port,
                            std::chrono::milliseconds timeout);

  ZmtpSocket(ZmtpSocket&& other) noexcept;
  ZmtpSocket& operator=(ZmtpSocket&& other) noexcept;
  ZmtpSocket(const ZmtpSocket&) = delete;
  ZmtpSocket& operator=(const ZmtpSocket&) = delete;
  ~ZmtpSocket();

  /// Sends one multipart message. REQ sockets prepend the empty delimiter.
  void send(const std::vector<std::string>& frames);

  /// Reads whatever is available without blocking (after poll reported
  /// readability). Returns false when the peer closed the connection.
  bool read_available();

  /// Next complete message from the buffer, if any. REQ strips the delimiter.
  std::optional<std::vector<std::string>> next_message();

  /// Blocking receive with timeout.
  std::optional<std::vector<std::string>> receive(std::chrono::milliseconds timeout);

  /// SUB only: subscribe to every topic.
  void subscribe_all();

  /// Shuts the connection down in both directions; wakes any poller.
  void shutdown();

  int fd() const { return fd_; }
  Type type() const { return type_; }

 private:
  ZmtpSocket(Type type, int fd) : type_(type), fd_(fd) {}
  void handshake(std::chrono::milliseconds timeout);
  void write_all(const std::string& bytes);
  void read_exact(std::string& out, std::size_t n, std::chrono::steady_clock::time_point deadline);
  void send_command(const std::string& body);
  bool parse_frames();

  Type type_;
  int fd_ = -1;
  std::mutex write_mu_;
  std::string inbuf_;
  std::vector<std::string> partial_;
  std::deque<std::vector<std::string>> ready_;
};

}  // namespace repro_lens::kernel
