#include "stm/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

namespace stm {
namespace {

std::string digest(const void* bytes, std::size_t n) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_Digest(bytes, n, md.data(), &len, EVP_sha256(), nullptr);
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) { return digest(bytes.data(), bytes.size()); }

std::string sha256_hex(std::span<const double> values) {
  return digest(values.data(), values.size_bytes());
}

}  // namespace stm
