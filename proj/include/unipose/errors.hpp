#pragma once

#include <stdexcept>
#include <string>

namespace unipose {

// All recoverable failures carry a stable machine-readable code; the CLI
// prints it as a single JSON error line on exit.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct NonPositiveDepth : Error {
  explicit NonPositiveDepth(const std::string& m) : Error("NonPositiveDepth", m) {}
};
struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& m) : Error("ShapeMismatch", m) {}
};
struct NonFiniteValue : Error {
  explicit NonFiniteValue(const std::string& m) : Error("NonFiniteValue", m) {}
};
struct NearZeroJoint : Error {
  explicit NearZeroJoint(const std::string& m) : Error("NearZeroJoint", m) {}
};
struct SequenceTooShort : Error {
  explicit SequenceTooShort(const std::string& m) : Error("SequenceTooShort", m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("FormatError", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

}  // namespace unipose
