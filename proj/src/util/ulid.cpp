#include "repro_lens/util/ulid.hpp"

#include <array>
#include <chrono>
#include <cstdint>
#include <mutex>
#include <random>

namespace repro_lens::util {

namespace {
constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
}

std::string make_ulid() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::uint64_t millis = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::uint64_t hi, lo;
  {
    std::lock_guard lock(mu);
    hi = rng() & 0xffff;  // 16 bits
    lo = rng();           // 64 bits
  }
  std::string out(26, '0');
  for (int i = 9; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[millis & 31];
    millis >>= 5;
  }
  // 80 random bits = 16 chars of 5 bits, taken from (hi:lo).
  for (int i = 25; i >= 10; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[lo & 31];
    lo = (lo >> 5) | ((hi & 31) << 59);
    hi >>= 5;
  }
  return out;
}

bool is_ulid(const std::string& s) {
  if (s.size() != 26) return false;
  for (char c : s) {
    bool found = false;
    for (const char* a = kAlphabet; *a; ++a) found |= (*a == c);
    if (!found) return false;
  }
  return s[0] <= '7';
}

}  // namespace repro_lens::util
