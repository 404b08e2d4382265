#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace observatory {

// All instants are UTC at second precision.
using Instant = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

// Parses "YYYY-MM-DDTHH:MM:SS[.fraction]Z". The fraction is truncated.
std::optional<Instant> parse_instant(std::string_view text);

// Formats as "YYYY-MM-DDTHH:MM:SSZ".
std::string format_instant(Instant t);

inline std::int64_t to_epoch_seconds(Instant t) { return t.time_since_epoch().count(); }
inline Instant from_epoch_seconds(std::int64_t s) { return Instant{Seconds{s}}; }

}  // namespace observatory
