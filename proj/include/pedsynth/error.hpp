#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pedsynth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed input text. `line` is 1-based (0 when not line oriented),
/// `offset` is a byte offset into the line or buffer.
class ParseError : public Error {
  public:
    ParseError(const std::string &what, std::size_t line, std::size_t offset = 0)
        : Error(what), line_(line), offset_(offset) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }
    [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t line_;
    std::size_t offset_;
};

/// A value violates a documented precondition or type invariant.
class InvalidArgument : public Error {
  public:
    using Error::Error;
};

/// Failure reported by a generation backend or an embedder.
class BackendError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace pedsynth
