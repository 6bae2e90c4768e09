#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ttnlab {

enum class ErrorKind {
  invalid_argument,
  shape_mismatch,
  degenerate_batch,
  non_finite,
  bad_format,
  unsupported_version,
  truncated,
  table_model_mismatch,
  incomplete_report,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace ttnlab
