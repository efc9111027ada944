#pragma once

#include <string>

namespace repro_lens::util {

/// 26-character Crockford base32 ULID: 48-bit millisecond timestamp + 80 random bits.
std::string make_ulid();

bool is_ulid(const std::string& s);

}  // namespace repro_lens::util
