// SPDX-License-Identifier: Apache-2.0
#include "gmbm/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

#include "gmbm/bytes.hpp"
#include "gmbm/errors.hpp"

namespace gmbm {

std::string sha256_hex(std::span<const std::uint8_t> data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::string hex;
  hex.reserve(2 * len);
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string sha256_hex_file(const std::filesystem::path& path) { return sha256_hex(bytes::read_file(path)); }

}  // namespace gmbm
