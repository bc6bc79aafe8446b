// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace gmbm {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex_file(const std::filesystem::path& path);

}  // namespace gmbm
