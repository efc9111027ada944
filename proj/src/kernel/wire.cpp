#include "repro_lens/kernel/wire.hpp"

#include "repro_lens/util/digest.hpp"
#include "repro_lens/util/time.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <openssl/crypto.h>
#include <openssl/core_names.h>
#include <openssl/evp.h>
#include <openssl/params.h>
#include <openssl/rand.h>
#include <sys/socket.h>
#include <unistd.h>

#include <set>

namespace repro_lens::kernel {

std::string_view to_string(KernelErrorKind kind) {
  switch (kind) {
    case KernelErrorKind::EmptyKey: return "EmptyKey";
    case KernelErrorKind::BadSignature: return "BadSignature";
    case KernelErrorKind::MalformedMessage: return "MalformedMessage";
    case KernelErrorKind::KernelLaunchFailed: return "KernelLaunchFailed";
    case KernelErrorKind::HandshakeTimeout: return "HandshakeTimeout";
    case KernelErrorKind::UnsupportedProtocol: return "UnsupportedProtocol";
    case KernelErrorKind::SessionDead: return "SessionDead";
  }
  return "SessionDead";
}

bool ConnectionInfo::valid() const {
  std::set<int> ports = {shell_port, iopub_port, stdin_port, control_port, hb_port};
  if (ports.size() != 5 || ports.count(0)) return false;
  for (int p : ports) {
    if (p < 0 || p > 65535) return false;
  }
  return signature_scheme.empty() || !key.empty();
}

Json ConnectionInfo::to_json() const {
  return {{"transport", transport},       {"ip", ip},
          {"shell_port", shell_port},     {"iopub_port", iopub_port},
          {"stdin_port", stdin_port},     {"control_port", control_port},
          {"hb_port", hb_port},           {"signature_scheme", signature_scheme},
          {"key", key},                   {"kernel_name", kernel_name}};
}

ConnectionInfo ConnectionInfo::from_json(const Json& j) {
  ConnectionInfo c;
  c.transport = j.value("transport", std::string("tcp"));
  c.ip = j.value("ip", std::string("127.0.0.1"));
  c.shell_port = j.at("shell_port").get<int>();
  c.iopub_port = j.at("iopub_port").get<int>();
  c.stdin_port = j.at("stdin_port").get<int>();
  c.control_port = j.at("control_port").get<int>();
  c.hb_port = j.at("hb_port").get<int>();
  c.signature_scheme = j.value("signature_scheme", std::string("hmac-sha256"));
  c.key = j.value("key", std::string{});
  c.kernel_name = j.value("kernel_name", std::string{});
  return c;
}

namespace {

// Binds every socket before closing any, so the five ports are distinct.
std::vector<int> free_ports(std::size_t n) {
  std::vector<int> fds, ports;
  for (std::size_t i = 0; i < n; ++i) {
    int fd = socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    socklen_t len = sizeof addr;
    if (fd < 0 || bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
      if (fd >= 0) close(fd);
      for (int f : fds) close(f);
      throw KernelError(KernelErrorKind::KernelLaunchFailed, "cannot allocate a local port");
    }
    fds.push_back(fd);
    ports.push_back(ntohs(addr.sin_port));
  }
  for (int f : fds) close(f);
  return ports;
}

std::string random_bytes(std::size_t n) {
  std::string out(n, '\0');
  if (RAND_bytes(reinterpret_cast<unsigned char*>(out.data()), static_cast<int>(n)) != 1) {
    throw std::runtime_error("RAND_bytes failed");
  }
  return out;
}

}  // namespace

ConnectionInfo ConnectionInfo::generate() {
  auto ports = free_ports(5);
  ConnectionInfo c;
  c.shell_port = ports[0];
  c.iopub_port = ports[1];
  c.stdin_port = ports[2];
  c.control_port = ports[3];
  c.hb_port = ports[4];
  c.key = new_uuid();
  return c;
}

std::string new_uuid() {
  std::string b = random_bytes(16);
  b[6] = static_cast<char>((b[6] & 0x0f) | 0x40);
  b[8] = static_cast<char>((b[8] & 0x3f) | 0x80);
  std::string hex = util::to_hex(b);
  return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
         hex.substr(16, 4) + "-" + hex.substr(20);
}

std::string sign_message(std::string_view key, std::span<const std::string, 4> frames) {
  if (key.empty()) throw KernelError(KernelErrorKind::EmptyKey, "signing key is empty");
  EVP_MAC* mac = EVP_MAC_fetch(nullptr, "HMAC", nullptr);
  EVP_MAC_CTX* ctx = mac ? EVP_MAC_CTX_new(mac) : nullptr;
  if (!ctx) {
    EVP_MAC_free(mac);
    throw std::runtime_error("HMAC unavailable");
  }
  char digest[] = "SHA256";
  OSSL_PARAM params[] = {OSSL_PARAM_construct_utf8_string("digest", digest, 0), OSSL_PARAM_construct_end()};
  unsigned char md[EVP_MAX_MD_SIZE];
  std::size_t len = 0;
  bool ok = EVP_MAC_init(ctx, reinterpret_cast<const unsigned char*>(key.data()), key.size(), params) == 1;
  for (const auto& f : frames) {
    ok = ok && EVP_MAC_update(ctx, reinterpret_cast<const unsigned char*>(f.data()), f.size()) == 1;
  }
  ok = ok && EVP_MAC_final(ctx, md, &len, sizeof md) == 1;
  EVP_MAC_CTX_free(ctx);
  EVP_MAC_free(mac);
  if (!ok) throw std::runtime_error("HMAC computation failed");
  return util::to_hex(std::string_view(reinterpret_cast<const char*>(md), len));
}

bool verify_signature(std::string_view key, std::span<const std::string, 4> frames,
                      std::string_view signature) {
  std::string expected = sign_message(key, frames);
  if (expected.size() != signature.size()) return false;
  return CRYPTO_memcmp(expected.data(), signature.data(), expected.size()) == 0;
}

std::vector<std::string> encode_frames(const WireMessage& msg, std::string_view key) {
  auto dump = [](const Json& j) { return j.dump(-1, ' ', false, Json::error_handler_t::replace); };
  std::array<std::string, 4> body = {dump(msg.header), dump(msg.parent_header), dump(msg.metadata),
                                     dump(msg.content)};
  std::vector<std::string> frames = msg.identities;
  frames.emplace_back(kDelimiter);
  frames.push_back(key.empty() ? std::string{} : sign_message(key, body));
  for (auto& b : body) frames.push_back(std::move(b));
  frames.insert(frames.end(), msg.buffers.begin(), msg.buffers.end());
  return frames;
}

WireMessage decode_frames(const std::vector<std::string>& frames, std::string_view key) {
  std::size_t delim = 0;
  while (delim < frames.size() && frames[delim] != kDelimiter) ++delim;
  if (delim == frames.size() || frames.size() - delim < 6) {
    throw KernelError(KernelErrorKind::MalformedMessage, "message lacks delimiter or body frames");
  }
  WireMessage msg;
  msg.identities.assign(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(delim));
  msg.signature = frames[delim + 1];
  std::array<std::string, 4> body = {frames[delim + 2], frames[delim + 3], frames[delim + 4],
                                     frames[delim + 5]};
  if (!key.empty() && !verify_signature(key, body, msg.signature)) {
    throw KernelError(KernelErrorKind::BadSignature, "message signature mismatch");
  }
  try {
    msg.header = Json::parse(body[0]);
    msg.parent_header = Json::parse(body[1]);
    msg.metadata = Json::parse(body[2]);
    msg.content = Json::parse(body[3]);
  } catch (const Json::parse_error& e) {
    throw KernelError(KernelErrorKind::MalformedMessage, e.what());
  }
  msg.buffers.assign(frames.begin() + static_cast<std::ptrdiff_t>(delim + 6), frames.end());
  return msg;
}

WireMessage make_message(std::string msg_type, const std::string& session, Json content,
                         const Json& parent_header) {
  WireMessage msg;
  msg.header = {{"msg_id", new_uuid()},
                {"msg_type", std::move(msg_type)},
                {"session", session},
                {"username", "repro-lens"},
                {"date", util::format_iso8601(util::now_utc())},
                {"version", std::string(kProtocolVersion)}};
  msg.parent_header = parent_header;
  msg.content = std::move(content);
  return msg;
}

}  // namespace repro_lens::kernel
