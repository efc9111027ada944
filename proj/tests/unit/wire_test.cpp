#include "fixtures.hpp"
#include "oracles.hpp"

#include "repro_lens/kernel/wire.hpp"

#include <doctest.h>

#include <array>
#include <random>

using namespace repro_lens;
using kernel::KernelError;
using kernel::KernelErrorKind;

namespace {

std::string random_bytes(std::mt19937_64& rng, std::size_t max_len) {
  std::string s(std::uniform_int_distribution<std::size_t>(0, max_len)(rng), '\0');
  for (auto& c : s) c = static_cast<char>(rng() & 0xff);
  return s;
}

}  // namespace

TEST_CASE("sign_message agrees with the hmac oracle on random vectors") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 250; ++i) {
    std::string key = random_bytes(rng, 150);
    if (key.empty()) key = "k";
    std::array<std::string, 4> frames;
    for (auto& f : frames) f = random_bytes(rng, 300);
    std::string concatenated = frames[0] + frames[1] + frames[2] + frames[3];
    CHECK(kernel::sign_message(key, frames) == oracle::hmac_sha256_hex(key, concatenated));
  }
}

TEST_CASE("signature verification catches every single-byte tamper") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 100; ++i) {
    std::string key = "key-" + std::to_string(i);
    std::array<std::string, 4> frames = {R"({"msg_id":"a"})", "{}", "{}", random_bytes(rng, 64) + "x"};
    std::string sig = kernel::sign_message(key, frames);
    CHECK(kernel::verify_signature(key, frames, sig));

    auto tampered = frames;
    auto& f = tampered[rng() % 4];
    f[rng() % f.size()] ^= static_cast<char>(1 + rng() % 255);
    CHECK_FALSE(kernel::verify_signature(key, tampered, sig));
    CHECK_FALSE(kernel::verify_signature(key + "!", frames, sig));
    std::string bad_sig = sig;
    bad_sig[rng() % bad_sig.size()] = bad_sig[0] == '0' ? '1' : '0';
    if (bad_sig != sig) CHECK_FALSE(kernel::verify_signature(key, frames, bad_sig));
  }
}

TEST_CASE("empty key is rejected for signing") {
  std::array<std::string, 4> frames = {"{}", "{}", "{}", "{}"};
  try {
    kernel::sign_message("", frames);
    FAIL("expected EmptyKey");
  } catch (const KernelError& e) {
    CHECK(e.kind() == KernelErrorKind::EmptyKey);
  }
}

TEST_CASE("frames round-trip and tampering is detected on decode") {
  auto msg = kernel::make_message("execute_request", "sess", {{"code", "1+1"}, {"silent", false}});
  msg.identities = {"ident-1"};
  msg.buffers = {std::string("raw\0bytes", 9)};
  auto frames = kernel::encode_frames(msg, "secret");
  REQUIRE(frames.size() == 8);
  CHECK(frames[0] == "ident-1");
  CHECK(frames[1] == kernel::kDelimiter);
  CHECK(frames[2] == oracle::hmac_sha256_hex("secret", frames[3] + frames[4] + frames[5] + frames[6]));

  auto back = kernel::decode_frames(frames, "secret");
  CHECK(back.msg_type() == "execute_request");
  CHECK(back.msg_id() == msg.msg_id());
  CHECK(back.content == msg.content);
  CHECK(back.identities == msg.identities);
  CHECK(back.buffers == msg.buffers);
  CHECK(back.header.value("version", "") == std::string(kernel::kProtocolVersion));

  auto bad = frames;
  bad[6] = R"({"code":"import os"})";
  try {
    kernel::decode_frames(bad, "secret");
    FAIL("expected BadSignature");
  } catch (const KernelError& e) {
    CHECK(e.kind() == KernelErrorKind::BadSignature);
  }
  CHECK_THROWS_AS(kernel::decode_frames({"no", "delimiter"}, "secret"), KernelError);

  // Unsigned sessions carry an empty signature.
  auto plain = kernel::encode_frames(msg, "");
  CHECK(plain[2].empty());
  CHECK(kernel::decode_frames(plain, "").content == msg.content);
}

TEST_CASE("message ids are unique") {
  std::set<std::string> ids;
  for (int i = 0; i < 1000; ++i) ids.insert(kernel::make_message("x", "s", {}).msg_id());
  CHECK(ids.size() == 1000);
}

TEST_CASE("connection info") {
  auto info = kernel::ConnectionInfo::generate();
  CHECK(info.valid());
  CHECK(info.key.size() >= 16);
  auto back = kernel::ConnectionInfo::from_json(info.to_json());
  CHECK(back.shell_port == info.shell_port);
  CHECK(back.key == info.key);
  std::set<int> ports = {info.shell_port, info.iopub_port, info.stdin_port, info.control_port, info.hb_port};
  CHECK(ports.size() == 5);
  auto dup = info;
  dup.hb_port = dup.shell_port;
  CHECK_FALSE(dup.valid());
}
