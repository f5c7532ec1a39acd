#pragma once

#include <stdexcept>
#include <string>

namespace bodhi {

enum class ErrorKind {
  invalid_argument,
  insufficient_data,
  dimension_mismatch,
  shape_mismatch,
  missing_prototype,
  size_overflow,
  no_sensitive_features,
  rank_deficient,
  zero_residual,
  malformed_manifest,
  truncated_payload,
  unsupported_version,
  io_failure,
};

const char* to_string(ErrorKind kind);

// All data-level failures raised by the toolkit. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace bodhi
