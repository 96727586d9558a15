#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cq {

enum class ErrorCode {
  BadParam,
  NonDivisible,
  TooFewSamples,
  DimMismatch,
  BadCode,
  NonFinite,
  BadDistribution,
  UnknownToken,
  EmptyBatch,
  HardModeGradient,
  ShapeMismatch,
  EmptyDoc,
  MissingDoc,
  LengthMismatch,
  CorruptFile,
  BadMagic,
  VersionMismatch,
  IoError,
  ParseError,
  EmptyRun,
  NotPermutation,
  MismatchedSets,
  TooLarge,
};

inline std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadParam:
      return "BadParam";
    case ErrorCode::NonDivisible:
      return "NonDivisible";
    case ErrorCode::TooFewSamples:
      return "TooFewSamples";
    case ErrorCode::DimMismatch:
      return "DimMismatch";
    case ErrorCode::BadCode:
      return "BadCode";
    case ErrorCode::NonFinite:
      return "NonFinite";
    case ErrorCode::BadDistribution:
      return "BadDistribution";
    case ErrorCode::UnknownToken:
      return "UnknownToken";
    case ErrorCode::EmptyBatch:
      return "EmptyBatch";
    case ErrorCode::HardModeGradient:
      return "HardModeGradient";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::EmptyDoc:
      return "EmptyDoc";
    case ErrorCode::MissingDoc:
      return "MissingDoc";
    case ErrorCode::LengthMismatch:
      return "LengthMismatch";
    case ErrorCode::CorruptFile:
      return "CorruptFile";
    case ErrorCode::BadMagic:
      return "BadMagic";
    case ErrorCode::VersionMismatch:
      return "VersionMismatch";
    case ErrorCode::IoError:
      return "IoError";
    case ErrorCode::ParseError:
      return "ParseError";
    case ErrorCode::EmptyRun:
      return "EmptyRun";
    case ErrorCode::NotPermutation:
      return "NotPermutation";
    case ErrorCode::MismatchedSets:
      return "MismatchedSets";
    case ErrorCode::TooLarge:
      return "TooLarge";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can dispatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_name(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace cq
