#pragma once

#include <stdexcept>
#include <string>

namespace actseg {

/// Base class for every validation or contract failure raised by the library.
/// `kind()` is a stable, machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ACTSEG_DEFINE_ERROR(Name)                                        \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& message) : Error(#Name, message) {} \
  }

ACTSEG_DEFINE_ERROR(InvalidGraph);
ACTSEG_DEFINE_ERROR(InvalidPermutation);
ACTSEG_DEFINE_ERROR(FormatError);
ACTSEG_DEFINE_ERROR(DegenerateSequence);
ACTSEG_DEFINE_ERROR(InsufficientData);
ACTSEG_DEFINE_ERROR(RangeError);
ACTSEG_DEFINE_ERROR(ConfigError);
ACTSEG_DEFINE_ERROR(ShapeError);
ACTSEG_DEFINE_ERROR(EmptyInput);
ACTSEG_DEFINE_ERROR(InvalidSegmentation);
ACTSEG_DEFINE_ERROR(CompatibilityError);
ACTSEG_DEFINE_ERROR(ChecksumError);
ACTSEG_DEFINE_ERROR(NonFiniteGradient);

#undef ACTSEG_DEFINE_ERROR

}  // namespace actseg
