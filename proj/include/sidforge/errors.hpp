#pragma once

#include <stdexcept>
#include <string>

namespace sidforge {

// Every error carries the tag of the module that raised it; what() is
// "<module>: <message>".
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}
  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

#define SIDFORGE_DEFINE_ERROR(Name)     \
  class Name : public Error {           \
   public:                              \
    using Error::Error;                 \
  };

SIDFORGE_DEFINE_ERROR(ConfigError)
SIDFORGE_DEFINE_ERROR(InputError)
SIDFORGE_DEFINE_ERROR(ShapeError)
SIDFORGE_DEFINE_ERROR(NumericError)
SIDFORGE_DEFINE_ERROR(UsageError)
SIDFORGE_DEFINE_ERROR(FormatError)
SIDFORGE_DEFINE_ERROR(CorruptionError)

#undef SIDFORGE_DEFINE_ERROR

}  // namespace sidforge
