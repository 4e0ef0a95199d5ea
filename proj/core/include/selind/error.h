#ifndef SELIND_ERROR_H_
#define SELIND_ERROR_H_

#include <stdexcept>
#include <string>

namespace selind {

// Failure categories. The CLI maps each to its own exit code.
enum class ErrorKind {
  kInvalidConfig,
  kNonContiguousLags,
  kUnsupportedLagSet,
  kSequenceTooShort,
  kDimensionMismatch,
  kNonConvergence,
  kBrokenConstruction,
  kIo,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace selind

#endif  // SELIND_ERROR_H_
