#pragma once

#include <stdexcept>
#include <string>

namespace facml {

// Exit-code buckets used by the CLI: usage errors map to 2, verification
// failures to 1, everything data/storage related to 3.
enum class ErrorKind {
  Usage,
  Verification,
  Data,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string what) : std::runtime_error(std::move(what)), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct SchemaError : Error {
  explicit SchemaError(const std::string& what) : Error(ErrorKind::Data, "schema error: " + what) {}
};

struct AlreadyExists : Error {
  explicit AlreadyExists(const std::string& what) : Error(ErrorKind::Data, "already exists: " + what) {}
};

struct KeyViolation : Error {
  explicit KeyViolation(const std::string& what) : Error(ErrorKind::Data, "key violation: " + what) {}
};

struct StorageError : Error {
  explicit StorageError(const std::string& what) : Error(ErrorKind::Data, "storage error: " + what) {}
};

struct IndexRequired : Error {
  explicit IndexRequired(const std::string& what) : Error(ErrorKind::Data, "index required: " + what) {}
};

struct ReferentialViolation : Error {
  explicit ReferentialViolation(const std::string& what)
      : Error(ErrorKind::Data, "referential violation: " + what) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& what) : Error(ErrorKind::Data, "format error: " + what) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Data, "shape error: " + what) {}
};

struct SingularCovariance : Error {
  explicit SingularCovariance(const std::string& what)
      : Error(ErrorKind::Data, "singular covariance: " + what) {}
};

struct StaleCache : Error {
  explicit StaleCache(const std::string& what) : Error(ErrorKind::Data, "stale cache: " + what) {}
};

struct ComparabilityError : Error {
  explicit ComparabilityError(const std::string& what)
      : Error(ErrorKind::Data, "incomparable traces: " + what) {}
};

struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, what) {}
};

}  // namespace facml
