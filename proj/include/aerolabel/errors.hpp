#pragma once

#include <stdexcept>
#include <string>

namespace aerolabel {

/// Broad failure categories; the CLI maps these onto process exit codes.
enum class ErrorKind {
  validation,  // bad arguments, bad config, violated preconditions
  io,          // missing/unreadable/unwritable files
  processing,  // malformed input data, referential integrity, pipeline failures
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void throw_validation(const std::string& msg) {
  throw Error(ErrorKind::validation, msg);
}

[[noreturn]] inline void throw_io(const std::string& msg) {
  throw Error(ErrorKind::io, msg);
}

[[noreturn]] inline void throw_processing(const std::string& msg) {
  throw Error(ErrorKind::processing, msg);
}

}  // namespace aerolabel
