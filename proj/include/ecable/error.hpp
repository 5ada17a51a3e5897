#pragma once

#include <stdexcept>
#include <string>

namespace ecable {

/// Broad failure classes. The CLI maps each one to its own exit code.
enum class ErrorKind {
  invalid_argument = 3,
  config = 4,
  data = 5,
  numerical = 6,
  infeasible = 7,
  io = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::config: return "config error";
    case ErrorKind::data: return "data error";
    case ErrorKind::numerical: return "numerical error";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::io: return "i/o error";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace ecable
