#pragma once

#include <stdexcept>
#include <string>

namespace replayguard {

enum class ErrorKind {
  kDomain,      // argument outside an operation's admissible range
  kConfig,      // bad configuration or recipe
  kFormat,      // malformed or truncated file
  kVersion,     // file written by an incompatible format version
  kDependency,  // a pipeline stage is missing an upstream artifact
  kNumeric,     // non-finite values during integration or training
};

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

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

// Process exit codes used by the command line tool.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDependency:
      return 3;
    case ErrorKind::kNumeric:
      return 4;
    default:
      return 2;
  }
}

}  // namespace replayguard
