#pragma once

#include <stdexcept>
#include <string>

namespace lastmile {

// Base for every failure the library reports. `code()` is a stable
// machine-readable identifier used in CLI stderr and HTTP error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define LASTMILE_DEFINE_ERROR(Name, Base, Code)                          \
  class Name : public Base {                                             \
   public:                                                               \
    explicit Name(const std::string& message) : Base(Code, message) {}   \
                                                                         \
   protected:                                                            \
    Name(std::string code, const std::string& message)                   \
        : Base(std::move(code), message) {}                              \
  };

// manual-store
LASTMILE_DEFINE_ERROR(MalformedManual, Error, "MalformedManual")
LASTMILE_DEFINE_ERROR(DuplicateSectionId, MalformedManual, "DuplicateSectionId")
LASTMILE_DEFINE_ERROR(InvalidDocument, Error, "InvalidDocument")

// retrieval-engine
LASTMILE_DEFINE_ERROR(DimensionMismatch, Error, "DimensionMismatch")
LASTMILE_DEFINE_ERROR(ZeroVector, Error, "ZeroVector")
LASTMILE_DEFINE_ERROR(MixedEmbeddingModel, Error, "MixedEmbeddingModel")

// providers
LASTMILE_DEFINE_ERROR(ProviderUnavailable, Error, "ProviderUnavailable")
LASTMILE_DEFINE_ERROR(ProviderTimeout, ProviderUnavailable, "ProviderTimeout")

// guardrails
LASTMILE_DEFINE_ERROR(EmptyText, Error, "EmptyText")

// assistant-core
LASTMILE_DEFINE_ERROR(InvalidQuery, Error, "InvalidQuery")
LASTMILE_DEFINE_ERROR(AdvisoryValidationFailed, Error, "AdvisoryValidationFailed")

// evalkit
LASTMILE_DEFINE_ERROR(EmptyGroup, Error, "EmptyGroup")
LASTMILE_DEFINE_ERROR(EmptyPanel, Error, "EmptyPanel")
LASTMILE_DEFINE_ERROR(OutOfRangeScore, Error, "OutOfRangeScore")
LASTMILE_DEFINE_ERROR(IncompleteDataset, Error, "IncompleteDataset")
LASTMILE_DEFINE_ERROR(DatasetNotFound, Error, "DatasetNotFound")

// service
LASTMILE_DEFINE_ERROR(ConfigError, Error, "ConfigError")
LASTMILE_DEFINE_ERROR(QueryLogError, Error, "QueryLogError")

#undef LASTMILE_DEFINE_ERROR

}  // namespace lastmile
