// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte packing shared by the binary file formats.
#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "gmbm/errors.hpp"

namespace gmbm::bytes {

namespace detail {
template <typename T, bool = std::is_floating_point_v<T>>
struct Bits {
  using type = std::make_unsigned_t<T>;
};
template <typename T>
struct Bits<T, true> {
  using type = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
};
}  // namespace detail

template <typename T>
using bits_of = typename detail::Bits<T>::type;

class Writer {
 public:
  explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    const auto bits = std::bit_cast<bits_of<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }

  void put_raw(std::span<const char> raw) { out_.insert(out_.end(), raw.begin(), raw.end()); }

 private:
  std::vector<std::uint8_t>& out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> in, std::string what) : in_(in), what_(std::move(what)) {}

  template <typename T>
  T get() {
    using U = bits_of<T>;
    const auto raw = take(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(static_cast<U>(raw[i]) << (8 * i));
    return std::bit_cast<T>(bits);
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    if (n > in_.size() - pos_) throw SchemaError(what_ + " truncated");
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace gmbm::bytes
