#pragma once

#include <stdexcept>
#include <string>

namespace voxnas {

// Domain error carrying a stable name (printed by the CLI on failure).
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& what)
      : std::runtime_error(name + ": " + what), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define VOXNAS_DEFINE_ERROR(Type)                                      \
  class Type : public Error {                                          \
   public:                                                             \
    explicit Type(const std::string& what) : Error(#Type, what) {}     \
  }

// dataset
VOXNAS_DEFINE_ERROR(MissingLevelColumn);
VOXNAS_DEFINE_ERROR(DuplicateKey);
VOXNAS_DEFINE_ERROR(NonNumericCell);
VOXNAS_DEFINE_ERROR(UnimputableFeature);
VOXNAS_DEFINE_ERROR(TooFewItems);
VOXNAS_DEFINE_ERROR(InvalidSpec);
// embedding
VOXNAS_DEFINE_ERROR(EmptyAxis);
VOXNAS_DEFINE_ERROR(SpaceTooLarge);
VOXNAS_DEFINE_ERROR(IncompleteGrid);
VOXNAS_DEFINE_ERROR(ShapeMismatch);
// supernet / search
VOXNAS_DEFINE_ERROR(UnsupportedStride);
VOXNAS_DEFINE_ERROR(NonFiniteLoss);
VOXNAS_DEFINE_ERROR(InvalidEpsilon);
// evaluation
VOXNAS_DEFINE_ERROR(LengthMismatch);
VOXNAS_DEFINE_ERROR(EmptyInput);
VOXNAS_DEFINE_ERROR(NegativeValue);
VOXNAS_DEFINE_ERROR(InsufficientHistory);
// selector
VOXNAS_DEFINE_ERROR(Infeasible);
VOXNAS_DEFINE_ERROR(InstanceTooLarge);
// io / config
VOXNAS_DEFINE_ERROR(IoError);
VOXNAS_DEFINE_ERROR(ConfigError);

#undef VOXNAS_DEFINE_ERROR

}  // namespace voxnas
