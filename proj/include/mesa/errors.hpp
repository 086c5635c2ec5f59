#pragma once

#include <stdexcept>
#include <string>

namespace mesa {

enum class ErrorKind {
  kInvalidArgument,
  kInvalidState,
  kInfeasibleGeometry,
  kDegenerateProfile,
  kHarvestFailure,
  kTrainingDiverged,
  kInvalidConfig,
  kIo,
};

const char* to_string(ErrorKind kind);

// Every failure surfaced by the library carries one of the kinds above so
// callers (CLI, Python bindings) can branch on it without parsing messages.
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

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace mesa
