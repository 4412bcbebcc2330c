#pragma once

#include <stdexcept>
#include <string>

namespace fakg {

enum class ErrorCode {
  kParse,            // malformed document or record
  kIntegrity,        // document parsed but violates graph invariants
  kUnknownEntity,
  kUnknownLabel,
  kInvalidArgument,
  kTransport,        // remote service failure
  kRejectedRecord,
};

// Single exception type for the library; the code drives CLI exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fakg
