#pragma once

// Little-endian byte-stream helpers shared by the shard and checkpoint
// formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include "posttrain/error.h"

namespace posttrain::binary {

class Writer {
 public:
  template <typename U>
  void put(U value) {
    static_assert(std::is_arithmetic_v<U>);
    using Bits = std::conditional_t<
        sizeof(U) == 1, std::uint8_t,
        std::conditional_t<sizeof(U) == 2, std::uint16_t,
                           std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                              std::uint64_t>>>;
    const Bits bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out_.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
    }
  }
  void put_bytes(std::string_view bytes) { out_.append(bytes); }
  // u32 length followed by the bytes.
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  std::string& buffer() { return out_; }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string what)
      : data_(data), what_(std::move(what)) {}

  template <typename U>
  U get() {
    static_assert(std::is_arithmetic_v<U>);
    using Bits = std::conditional_t<
        sizeof(U) == 1, std::uint8_t,
        std::conditional_t<sizeof(U) == 2, std::uint16_t,
                           std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                              std::uint64_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bits |= static_cast<Bits>(static_cast<std::uint8_t>(data_[pos_ + i]))
              << (8 * i);
    }
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    return std::string(get_bytes(n));
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) {
      throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace posttrain::binary
