#pragma once

#include <stdexcept>
#include <string>

namespace capellm {

// Base of every error the library throws. `kind()` is a stable machine-readable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CAPELLM_DEFINE_ERROR(Name, tag)                                \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(tag, what) {}       \
  };

CAPELLM_DEFINE_ERROR(DimensionError, "dimension")
CAPELLM_DEFINE_ERROR(ConfigError, "config")
CAPELLM_DEFINE_ERROR(DomainError, "domain")
CAPELLM_DEFINE_ERROR(EmptySupervisionError, "empty_supervision")
CAPELLM_DEFINE_ERROR(NonFiniteError, "non_finite")
CAPELLM_DEFINE_ERROR(ContextOverflowError, "context_overflow")
CAPELLM_DEFINE_ERROR(RegistryError, "registry")
CAPELLM_DEFINE_ERROR(SchemaError, "schema")
CAPELLM_DEFINE_ERROR(IoError, "io")
CAPELLM_DEFINE_ERROR(MissingFileError, "missing_file")
CAPELLM_DEFINE_ERROR(PreconditionError, "precondition")

#undef CAPELLM_DEFINE_ERROR

}  // namespace capellm
