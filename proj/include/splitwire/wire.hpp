#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splitwire/tensor.hpp"

namespace splitwire {

using Bytes = std::vector<std::uint8_t>;

/// Little-endian append-only writer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void raw(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  void tensor(const Tensor& t);

  std::size_t size() const noexcept { return buf_.size(); }
  Bytes take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes buf_;
};

/// Little-endian reader; every failure is a Decode OffsetError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes, std::size_t base_offset = 0)
      : bytes_(bytes), base_(base_offset) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1, "u8")); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2, "u16")); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4, "u32")); }
  std::uint64_t u64() { return get(8, "u64"); }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what);
  Tensor tensor();

  std::size_t offset() const noexcept { return base_ + pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::uint64_t get(std::size_t n, const char* what);

  std::span<const std::uint8_t> bytes_;
  std::size_t base_ = 0;
  std::size_t pos_ = 0;
};

/// Size of a tensor encoding: dtype u8 | ndim u8 | u32 dims | raw scalars.
inline std::size_t tensor_encoding_size(const Tensor& t) { return 2 + 4 * t.rank() + t.nbytes(); }

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace splitwire
