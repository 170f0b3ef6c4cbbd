#pragma once

#include <stdexcept>
#include <string>

namespace sense {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  io,
  degenerate,
  digest_mismatch,
  leakage,
  not_found,
  uninitialized,
  conflict,
  busy,
};

const char* to_string(ErrorKind kind);

// Single exception type for the library; `kind` drives exit codes and HTTP
// status mapping in the gateway.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sense
