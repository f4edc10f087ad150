// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mslb {

/// Base of every error raised by the library. `kind()` is a stable short tag
/// used by the CLI to choose an exit code and by tests to match error classes.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(kind + " error: " + what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MSLB_DEFINE_ERROR(Name, tag) \
  class Name : public Error {        \
   public:                           \
    explicit Name(const std::string& what) : Error(tag, what) {} \
  }

MSLB_DEFINE_ERROR(ShapeError, "shape");
MSLB_DEFINE_ERROR(IndexError, "index");
MSLB_DEFINE_ERROR(LengthError, "length");
MSLB_DEFINE_ERROR(ContractError, "contract");
MSLB_DEFINE_ERROR(NumericError, "numeric");
MSLB_DEFINE_ERROR(DataError, "data");
MSLB_DEFINE_ERROR(FormatError, "format");
MSLB_DEFINE_ERROR(ConfigError, "config");
MSLB_DEFINE_ERROR(DependencyError, "dependency");
MSLB_DEFINE_ERROR(AlphabetError, "alphabet");
MSLB_DEFINE_ERROR(FramingError, "framing");
MSLB_DEFINE_ERROR(SynthesisError, "synthesis");

#undef MSLB_DEFINE_ERROR

}  // namespace mslb
