#pragma once

#include <stdexcept>
#include <string>

namespace dexined {

enum class ErrorKind {
  Shape,
  Argument,
  Config,
  Io,
  Format,
  Version,
  Truncated,
  Integrity,
  Numeric,
  Training,
  Augmentation,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind()` drives the C status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace dexined
