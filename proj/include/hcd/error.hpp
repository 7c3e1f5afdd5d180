#pragma once

#include <stdexcept>
#include <string>

namespace hcd {

// Error taxonomy. Kinds matter: the CLI maps them to exit codes and the
// loaders promise distinct kinds for magic/version/checksum/shape problems.
enum class ErrorKind {
  kShape,     // tensor/file dimension mismatch
  kConfig,    // invalid configuration value or combination
  kFormat,    // bad magic or malformed file structure
  kVersion,   // unsupported file version
  kChecksum,  // payload checksum mismatch
  kIo,        // filesystem failure
  kState,     // API misuse (double backward, missing grad, ...)
  kNumeric,   // non-finite values where finite ones are required
  kCli,       // command-line usage error
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kVersion: return "version";
    case ErrorKind::kChecksum: return "checksum";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kState: return "state";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kCli: return "cli";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace hcd
