#include "splitwire/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>

namespace splitwire {

static_assert(std::endian::native == std::endian::little, "raw scalar copies assume a little-endian host");

void ByteWriter::tensor(const Tensor& t) {
  require(!t.empty(), ErrorKind::Contract, "cannot encode an empty tensor");
  require(t.rank() <= 255, ErrorKind::Contract, "tensor rank exceeds 255");
  u8(static_cast<std::uint8_t>(t.dtype()));
  u8(static_cast<std::uint8_t>(t.rank()));
  for (auto d : t.dims()) {
    require(d <= std::numeric_limits<std::uint32_t>::max(), ErrorKind::Contract, "tensor extent exceeds u32");
    u32(static_cast<std::uint32_t>(d));
  }
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto d = t.data<T>();
    const auto* p = reinterpret_cast<const std::uint8_t*>(d.data());
    raw(std::span<const std::uint8_t>(p, d.size() * sizeof(T)));
  });
}

void ByteReader::fail(const std::string& what) const { throw OffsetError(ErrorKind::Decode, what, offset()); }

std::uint64_t ByteReader::get(std::size_t n, const char* what) {
  if (remaining() < n) fail(std::string("truncated while reading ") + what);
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t n, const char* what) {
  if (remaining() < n) fail(std::string("truncated while reading ") + what);
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

Tensor ByteReader::tensor() {
  const std::size_t start = offset();
  const std::uint8_t dtype = u8();
  if (dtype > 1) throw OffsetError(ErrorKind::Decode, "unknown tensor dtype " + std::to_string(dtype), start);
  const std::uint8_t ndim = u8();
  if (ndim == 0) throw OffsetError(ErrorKind::Decode, "tensor with zero dimensions", start + 1);
  Shape dims(ndim);
  std::size_t numel = 1;
  for (auto& d : dims) {
    const std::size_t at = offset();
    d = u32();
    if (d == 0) throw OffsetError(ErrorKind::Decode, "tensor extent of zero", at);
    if (d > remaining() / numel) fail("tensor payload larger than frame");
    numel *= d;
  }
  const DType dt = static_cast<DType>(dtype);
  const std::size_t bytes = numel * dtype_size(dt);
  if (bytes / dtype_size(dt) != numel || remaining() < bytes) fail("truncated tensor payload");
  auto payload = raw(bytes, "tensor payload");
  Tensor t(std::move(dims), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    std::memcpy(t.data<T>().data(), payload.data(), bytes);
  });
  return t;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), seed);
}

}  // namespace splitwire
