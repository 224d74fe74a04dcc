#pragma once

#include <stdexcept>
#include <string>

namespace fmreg {

// Stable numbering: the C API forwards these values unchanged.
enum class ErrorCode {
  InvalidArgument = 1,
  Io = 2,
  Parse = 3,
  Degenerate = 4,
  Invariant = 5,
  RegistrationFailed = 6,
  CheckFailed = 7,
  Internal = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorCode::InvalidArgument, what);
}

}  // namespace fmreg
