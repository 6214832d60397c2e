#include "srcfree/error.hpp"

namespace srcfree {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::DegenerateDataset: return "DegenerateDataset";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::AllAnchorsZero: return "AllAnchorsZero";
    case ErrorCode::ZeroAnchor: return "ZeroAnchor";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::TooFewClasses: return "TooFewClasses";
    case ErrorCode::AbsentClass: return "AbsentClass";
    case ErrorCode::NoConfidentSamples: return "NoConfidentSamples";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

namespace {
std::string format_message(ErrorCode code, const std::string& detail) {
  std::string msg(error_code_name(code));
  if (!detail.empty()) {
    msg += ": ";
    for (char c : detail) msg += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return msg;
}
}  // namespace

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(format_message(code, detail)), code_(code) {}

}  // namespace srcfree
