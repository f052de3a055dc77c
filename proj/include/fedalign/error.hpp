#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedalign {

enum class ErrorKind {
  DimensionMismatch,
  NonFiniteResult,
  EmptyBatch,
  EmptyDataset,
  InvalidSpec,
  InvalidLambda,
  UnknownDomain,
  InsufficientDomains,
  InconsistentDimension,
  IoError,
  ParseError,
  EmptyUpdateSet,
  OverflowAtScale,
  TraceViolation,
  ConfigError,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteResult: return "NonFiniteResult";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidLambda: return "InvalidLambda";
    case ErrorKind::UnknownDomain: return "UnknownDomain";
    case ErrorKind::InsufficientDomains: return "InsufficientDomains";
    case ErrorKind::InconsistentDimension: return "InconsistentDimension";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::EmptyUpdateSet: return "EmptyUpdateSet";
    case ErrorKind::OverflowAtScale: return "OverflowAtScale";
    case ErrorKind::TraceViolation: return "TraceViolation";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

// All library failures surface as this exception; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse failures carry the 1-based line and column of the offending cell.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& message)
      : Error(ErrorKind::ParseError,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace fedalign
