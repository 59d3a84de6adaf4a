// SPDX-License-Identifier: Apache-2.0
#include "mmguide/format.hpp"

#include <charconv>
#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

std::string format_double(double v) {
  if (std::isnan(v))
    return "nan";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r'))
      ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t' && s[i] != '\r')
      ++i;
    if (i > start)
      out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos)
    return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

namespace {

template <class T> T parse_number(std::string_view s, std::size_t line,
                                  const char *kind) {
  T v{};
  const auto *end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != end)
    throw ParseError("expected " + std::string(kind) + ", got '" +
                         std::string(s) + "'",
                     line);
  return v;
}

} // namespace

double parse_double(std::string_view s, std::size_t line) {
  if (s == "nan")
    return std::nan("");
  if (s == "inf")
    return INFINITY;
  if (s == "-inf")
    return -INFINITY;
  return parse_number<double>(s, line, "a number");
}

std::int64_t parse_int(std::string_view s, std::size_t line) {
  return parse_number<std::int64_t>(s, line, "an integer");
}

std::uint64_t parse_uint(std::string_view s, std::size_t line) {
  return parse_number<std::uint64_t>(s, line, "a non-negative integer");
}

bool parse_bool(std::string_view s, std::size_t line) {
  if (s == "true" || s == "1" || s == "yes" || s == "on")
    return true;
  if (s == "false" || s == "0" || s == "no" || s == "off")
    return false;
  throw ParseError("expected a boolean, got '" + std::string(s) + "'", line);
}

} // namespace mmguide
