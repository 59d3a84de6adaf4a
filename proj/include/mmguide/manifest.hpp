// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmguide {

inline constexpr std::string_view kToolVersion = "0.1.0";

/// Ordered key=value record of one command invocation: its configuration,
/// inputs (with content hashes) and outputs.
class RunManifest {
public:
  void add(std::string key, std::string value);
  std::optional<std::string> get(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>> &entries() const {
    return entries_;
  }

  void write(std::ostream &os) const;
  void write(const std::filesystem::path &path) const;
  static RunManifest read(std::istream &is);
  static RunManifest read(const std::filesystem::path &path);

private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path &path);
std::string sha256_hex(std::string_view bytes);

} // namespace mmguide
