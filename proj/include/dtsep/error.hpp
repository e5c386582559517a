#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtsep {

enum class ErrorKind {
  FileNotFound,
  UnsupportedFormat,
  EmptyAudio,
  InvalidArgument,
  ShapeMismatch,
  RateMismatch,
  SilentInput,
  NumericalFailure,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::FileNotFound: return "file-not-found";
    case ErrorKind::UnsupportedFormat: return "unsupported-format";
    case ErrorKind::EmptyAudio: return "empty-audio";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::RateMismatch: return "rate-mismatch";
    case ErrorKind::SilentInput: return "silent-input";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

// All library failures are reported through this type; kind() lets callers
// (and the CLI's machine-readable error line) tell them apart.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace dtsep
