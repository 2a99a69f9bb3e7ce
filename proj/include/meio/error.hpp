#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace meio {

enum class ErrorKind {
  kInvalidParameter,
  kMissingData,
  kValidation,
  kConfiguration,
  kContract,
  kTraining,
  kIo,
};

std::string_view to_string(ErrorKind kind);

// All library failures surface as meio::Error; the kind is stable and is what
// the CLI writes into its machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace meio
