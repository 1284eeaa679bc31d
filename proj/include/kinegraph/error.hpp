#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kinegraph {

enum class ErrorKind {
  MalformedLine,
  JointCountMismatch,
  EmptyFile,
  SchemaViolation,
  DimensionMismatch,
  ZeroVector,
  SameJoint,
  EmptySampleSet,
  InconsistentJointCount,
  TooLarge,
  NotSymmetric,
  SpectrumOutOfRange,
  DomainError,
  ZeroDegree,
  TooShort,
  BudgetExceeded,
  ShapeMismatch,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Numerical failures map to CLI exit code 3, everything else to 2.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Parser error carrying the 1-based source line.
class ParseError : public Error {
 public:
  ParseError(ErrorKind kind, std::size_t line, const std::string& expected)
      : Error(kind, "line " + std::to_string(line) + ": expected " + expected),
        line_(line),
        expected_(expected) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& expected() const noexcept { return expected_; }

 private:
  std::size_t line_;
  std::string expected_;
};

// Schema error carrying the JSON pointer of the offending element.
class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& path, const std::string& what = "missing or invalid")
      : Error(ErrorKind::SchemaViolation, path + " " + what), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace kinegraph
