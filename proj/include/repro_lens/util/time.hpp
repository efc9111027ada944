#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>

namespace repro_lens::util {

/// UTC wall-clock instant with millisecond resolution.
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

Timestamp now_utc();

/// `YYYY-MM-DDTHH:MM:SS.mmmZ`
std::string format_iso8601(Timestamp t);

/// Accepts the format produced by format_iso8601 (fraction optional, 'Z' required).
std::optional<Timestamp> parse_iso8601(std::string_view text);

}  // namespace repro_lens::util
