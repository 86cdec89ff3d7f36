#include "advrl/numfmt.hpp"

#include <array>
#include <charconv>

namespace advrl {

namespace {

std::string to_chars_string(double value, std::chars_format fmt) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value, fmt);
  return std::string(buf.data(), end);
}

std::optional<double> from_chars_full(std::string_view text, std::chars_format fmt) {
  if (text.empty()) return std::nullopt;
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, fmt);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

}  // namespace

std::string format_double(double value) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string format_hex(double value) { return to_chars_string(value, std::chars_format::hex); }

std::optional<double> parse_double(std::string_view text) {
  return from_chars_full(text, std::chars_format::general);
}

std::optional<double> parse_hex(std::string_view text) {
  return from_chars_full(text, std::chars_format::hex);
}

}  // namespace advrl
