#pragma once

#include <string>
#include <string_view>

namespace kclab {

/// Shortest decimal that round-trips to the same double ("0.1", "1", "2.5e-07").
std::string format_double(double v);

/// Fixed-precision rendering for human-facing tables.
std::string format_fixed(double v, int decimals);

/// Strict parse: the whole string must be a finite number. Throws ParseError.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

std::string trim(std::string_view text);

}  // namespace kclab
