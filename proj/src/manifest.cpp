// SPDX-License-Identifier: Apache-2.0
#include "mmguide/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <istream>
#include <memory>
#include <ostream>

#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

void RunManifest::add(std::string key, std::string value) {
  for (auto &[k, v] : entries_)
    if (k == key) {
      v = std::move(value);
      return;
    }
  entries_.emplace_back(std::move(key), std::move(value));
}

std::optional<std::string> RunManifest::get(std::string_view key) const {
  for (const auto &[k, v] : entries_)
    if (k == key)
      return v;
  return std::nullopt;
}

void RunManifest::write(std::ostream &os) const {
  for (const auto &[k, v] : entries_)
    os << k << '=' << v << '\n';
}

void RunManifest::write(const std::filesystem::path &path) const {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  write(os);
}

RunManifest RunManifest::read(std::istream &is) {
  RunManifest m;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("manifest: expected key=value", lineno);
    m.add(std::string(trim(line.substr(0, eq))),
          std::string(trim(line.substr(eq + 1))));
  }
  return m;
}

RunManifest RunManifest::read(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is)
    throw std::runtime_error("cannot open manifest " + path.string());
  return read(is);
}

namespace {

struct DigestDeleter {
  void operator()(EVP_MD_CTX *c) const { EVP_MD_CTX_free(c); }
};

class Sha256 {
public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256 initialization failed");
  }
  void update(const char *data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1)
      throw std::runtime_error("sha256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1)
      throw std::runtime_error("sha256 finalization failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[md[i] >> 4]);
      out.push_back(kHex[md[i] & 15]);
    }
    return out;
  }

private:
  std::unique_ptr<EVP_MD_CTX, DigestDeleter> ctx_;
};

} // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  return h.hex();
}

} // namespace mmguide
