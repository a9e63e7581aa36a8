#pragma once

#include <stdexcept>
#include <string>

namespace arpo {

enum class ErrorCode {
  kConfig = 1,
  kSplitViolation = 2,
  kUsage = 3,
  kShape = 4,
  kDomain = 5,
  kNumeric = 6,
  kIo = 7,
  kInvalidArgument = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCode::kConfig, w) {}
};

// A level was requested from a split the environment was not opened for.
struct SplitViolation : Error {
  explicit SplitViolation(const std::string& w)
      : Error(ErrorCode::kSplitViolation, w) {}
};

// API used out of order, e.g. stepping a finished episode.
struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorCode::kUsage, w) {}
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCode::kShape, w) {}
};

// Argument outside its mathematical domain (gamma, domain labels, ...).
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorCode::kDomain, w) {}
};

// Non-finite loss or a zero probability where a ratio is needed.
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCode::kNumeric, w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::kIo, w) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& w)
      : Error(ErrorCode::kInvalidArgument, w) {}
};

}  // namespace arpo
