#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace srcfree {

enum class ErrorCode {
  ShapeMismatch,
  NotPositiveDefinite,
  BadMagic,
  UnsupportedVersion,
  TruncatedFile,
  LabelOutOfRange,
  IndexOutOfRange,
  MissingLabels,
  InvalidDataset,
  DegenerateDataset,
  ZeroVector,
  AllAnchorsZero,
  ZeroAnchor,
  EmptyClass,
  TooFewClasses,
  AbsentClass,
  NoConfidentSamples,
  InvalidConfig,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// Every failure in the library surfaces as this exception. what() is a single
// line of the form "<CodeName>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace srcfree
