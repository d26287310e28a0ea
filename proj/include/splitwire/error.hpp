#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splitwire {

/// Coarse error classes. The C API maps each onto a status code and the CLI
/// maps them onto exit codes, so new kinds must be added in all three places.
enum class ErrorKind {
  Shape,
  Validation,
  Contract,
  Config,
  Decode,
  Parse,
  Io,
  Transport,
  Truncation,
  Timeout,
  Protocol,
  Handshake,
  Closed,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Decode and file-parse errors carry the byte offset where parsing stopped.
class OffsetError : public Error {
 public:
  OffsetError(ErrorKind kind, const std::string& what, std::size_t offset)
      : Error(kind, what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) throw Error(kind, what);
}

}  // namespace splitwire
