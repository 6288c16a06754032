#pragma once

#include <stdexcept>
#include <string>

namespace vtr {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VTR_DECLARE_ERROR(Name)              \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  }

VTR_DECLARE_ERROR(ShapeError);
VTR_DECLARE_ERROR(ContractError);
VTR_DECLARE_ERROR(NumericError);
VTR_DECLARE_ERROR(CapacityError);
VTR_DECLARE_ERROR(ConfigError);
VTR_DECLARE_ERROR(DegeneracyError);
VTR_DECLARE_ERROR(IoError);
VTR_DECLARE_ERROR(ParseError);
VTR_DECLARE_ERROR(FormatError);
VTR_DECLARE_ERROR(CorruptionError);
VTR_DECLARE_ERROR(ValidationError);
VTR_DECLARE_ERROR(DanglingReferenceError);

#undef VTR_DECLARE_ERROR

}  // namespace vtr
