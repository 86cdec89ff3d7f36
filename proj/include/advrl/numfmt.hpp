#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace advrl {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
/// Hexadecimal float text (no 0x prefix), exact.
std::string format_hex(double value);

std::optional<double> parse_double(std::string_view text);
std::optional<double> parse_hex(std::string_view text);

}  // namespace advrl
