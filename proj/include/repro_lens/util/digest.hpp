#pragma once

#include <string>
#include <string_view>

namespace repro_lens::util {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// Lowercase hex encoding of arbitrary bytes.
std::string to_hex(std::string_view bytes);

/// Decodes standard (RFC 4648) base64, ignoring embedded whitespace.
/// Returns false on malformed input.
bool base64_decode(std::string_view in, std::string& out);

/// Percent-encodes everything outside the RFC 3986 unreserved set.
std::string url_encode(std::string_view in);

}  // namespace repro_lens::util
