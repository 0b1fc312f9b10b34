#pragma once

#include <stdexcept>
#include <string>

namespace iid {

// Error categories map 1:1 onto CLI exit codes.
enum class ErrorCode {
  BadArgs = 2,
  BadInput = 3,
  Numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}

  ErrorCode code() const { return code_; }

  const char* code_name() const {
    switch (code_) {
      case ErrorCode::BadArgs: return "E_BAD_ARGS";
      case ErrorCode::BadInput: return "E_BAD_INPUT";
      case ErrorCode::Numeric: return "E_NUMERIC";
    }
    return "E_UNKNOWN";
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail_input(const std::string& msg) {
  throw Error(ErrorCode::BadInput, msg);
}

[[noreturn]] inline void fail_numeric(const std::string& msg) {
  throw Error(ErrorCode::Numeric, msg);
}

[[noreturn]] inline void fail_args(const std::string& msg) {
  throw Error(ErrorCode::BadArgs, msg);
}

}  // namespace iid
