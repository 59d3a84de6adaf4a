// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mmguide {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

std::vector<std::string_view> split(std::string_view s, char sep);
std::vector<std::string_view> split_whitespace(std::string_view s);
std::string_view trim(std::string_view s);

/// Strict whole-field parsers; throw ParseError tagged with `line`.
double parse_double(std::string_view s, std::size_t line = 0);
std::int64_t parse_int(std::string_view s, std::size_t line = 0);
std::uint64_t parse_uint(std::string_view s, std::size_t line = 0);
bool parse_bool(std::string_view s, std::size_t line = 0);

} // namespace mmguide
