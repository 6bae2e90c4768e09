#include "ttnlab/error.hpp"

namespace ttnlab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid argument";
    case ErrorKind::shape_mismatch: return "shape mismatch";
    case ErrorKind::degenerate_batch: return "degenerate batch";
    case ErrorKind::non_finite: return "non-finite value";
    case ErrorKind::bad_format: return "bad format";
    case ErrorKind::unsupported_version: return "unsupported version";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::table_model_mismatch: return "table/model mismatch";
    case ErrorKind::incomplete_report: return "incomplete report";
    case ErrorKind::io: return "i/o error";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind), detail_(message) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace ttnlab
