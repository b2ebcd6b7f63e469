#pragma once

#include <stdexcept>
#include <string>

namespace reconformer {

enum class ErrorKind {
  Domain,   // bad runtime data (non-finite input, zero data range, ...)
  Config,   // invalid configuration value
  Shape,    // tensor/image geometry mismatch
  Usage,    // API misuse (backward on freed graph, unknown CLI flag, ...)
  Format,   // malformed file content
  Io,       // filesystem failure
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string where, std::string what)
      : std::runtime_error(where + ": " + what), kind_(kind), where_(std::move(where)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& where() const { return where_; }

 private:
  ErrorKind kind_;
  std::string where_;
};

// `where` is "module::operation" so CLI diagnostics can point at the failing op.
[[noreturn]] inline void fail(ErrorKind kind, const std::string& where, const std::string& what) {
  throw Error(kind, where, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& where, const std::string& what) {
  if (!cond) fail(kind, where, what);
}

}  // namespace reconformer
