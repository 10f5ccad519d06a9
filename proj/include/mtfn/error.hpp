#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mtfn {

// Error categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  invalid_argument,  // bad hyperparameter or out-of-range index
  shape,             // dimension mismatch between operands
  io,                // missing or unwritable file
  format,            // corrupt or unrecognized file contents
  numeric,           // NaN/Inf produced or detected
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace mtfn
