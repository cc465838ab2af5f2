#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace delaycast {

/// Argument outside the support of a density (e.g. z > n for a Beta-Binomial).
/// Distinct from a zero-probability outcome, which is reported as -inf.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Invalid model, sampler, or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ParseErrorKind {
  kNoRecords,
  kMissingColumn,
  kMalformedRow,
  kNegativeCount,
  kNonIntegerCount,
  kDuplicateKey,
  kDelayBelowOne,
  kTimeBelowOne,
  kIo,
};

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        kind_(kind),
        line_(line) {}

  ParseErrorKind kind() const noexcept { return kind_; }
  /// 1-based physical line of the offending record (0 when not line-specific).
  std::size_t line() const noexcept { return line_; }

 private:
  ParseErrorKind kind_;
  std::size_t line_;
};

}  // namespace delaycast
