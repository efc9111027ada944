#pragma once

#include <json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace repro_lens::kernel {

using Json = nlohmann::json;

enum class KernelErrorKind {
  EmptyKey,
  BadSignature,
  MalformedMessage,
  KernelLaunchFailed,
  HandshakeTimeout,
  UnsupportedProtocol,
  SessionDead,
};

std::string_view to_string(KernelErrorKind kind);

class KernelError : public std::runtime_error {
 public:
  KernelError(KernelErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  KernelErrorKind kind() const { return kind_; }

 private:
  KernelErrorKind kind_;
};

/// Contents of a kernel connection file.
struct ConnectionInfo {
  std::string transport = "tcp";
  std::string ip = "127.0.0.1";
  int shell_port = 0;
  int iopub_port = 0;
  int stdin_port = 0;
  int control_port = 0;
  int hb_port = 0;
  std::string signature_scheme = "hmac-sha256";
  std::string key;
  std::string kernel_name;

  /// Ports distinct and nonzero; key non-empty when a scheme is set.
  bool valid() const;
  Json to_json() const;
  static ConnectionInfo from_json(const Json& j);
  /// Fresh info with OS-assigned free loopback ports and a random key.
  static ConnectionInfo generate();
};

/// The delimiter between routing identities and the signed message body.
inline constexpr std::string_view kDelimiter = "<IDS|MSG>";

/// Protocol version this client speaks.
inline constexpr std::string_view kProtocolVersion = "5.3";

/// HMAC-SHA256 over the concatenation of header, parent_header, metadata and
/// content, rendered as lowercase hex. Throws KernelError(EmptyKey).
std::string sign_message(std::string_view key, std::span<const std::string, 4> frames);

/// Constant-time comparison of `signature` against sign_message(key, frames).
bool verify_signature(std::string_view key, std::span<const std::string, 4> frames,
                      std::string_view signature);

struct WireMessage {
  std::vector<std::string> identities;
  std::string signature;
  Json header = Json::object();
  Json parent_header = Json::object();
  Json metadata = Json::object();
  Json content = Json::object();
  std::vector<std::string> buffers;

  std::string msg_id() const { return header.value("msg_id", std::string{}); }
  std::string msg_type() const { return header.value("msg_type", std::string{}); }
  std::string parent_id() const {
    return parent_header.is_object() ? parent_header.value("msg_id", std::string{}) : std::string{};
  }
};

/// Signs and frames a message: identities..., delimiter, signature, four JSON
/// frames, buffers. An empty key produces an empty signature (unsigned session).
std::vector<std::string> encode_frames(const WireMessage& msg, std::string_view key);

/// Inverse of encode_frames. Verifies the signature when `key` is non-empty.
/// Throws KernelError(BadSignature | MalformedMessage).
WireMessage decode_frames(const std::vector<std::string>& frames, std::string_view key);

/// Builds a message with a fresh unique msg_id and the current UTC date.
WireMessage make_message(std::string msg_type, const std::string& session, Json content,
                         const Json& parent_header = Json::object());

/// Random UUID4-style identifier.
std::string new_uuid();

}  // namespace repro_lens::kernel
