#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mkat {

enum class ErrorKind {
  shape_mismatch,
  numeric_overflow,
  invalid_argument,
  degenerate_input,
  assumption_violation,
  io_error,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::numeric_overflow: return "numeric overflow";
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::degenerate_input: return "degenerate input";
    case ErrorKind::assumption_violation: return "assumption violation";
    case ErrorKind::io_error: return "io error";
  }
  return "error";
}

}  // namespace mkat
