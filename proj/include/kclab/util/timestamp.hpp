#pragma once

#include <chrono>
#include <string>
#include <string_view>

namespace kclab {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Parses an RFC 3339 date-time ("2019-02-01T10:00:00Z", "...+05:30",
/// fractional seconds truncated to milliseconds). Throws ParseError.
Timestamp parse_rfc3339(std::string_view text);

/// Canonical UTC rendering; milliseconds appear only when non-zero.
std::string format_rfc3339(Timestamp ts);

}  // namespace kclab
