#pragma once

#include <stdexcept>
#include <string>

namespace dcin {

// Base for all library errors. The CLI maps these to a one-line
// "error: <kind>: <message>" on stderr and a nonzero exit status.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("dimension", m) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& m) : Error("contract", m) {}
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& m) : Error("validation", m) {}
};

struct VocabularyError : Error {
  explicit VocabularyError(const std::string& m) : Error("vocabulary", m) {}
};

struct IoError : Error {
  explicit IoError(const std::string& m) : Error("io", m) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

// Statistical queries on counts that do not support them.
struct UndefinedConditionalError : Error {
  explicit UndefinedConditionalError(const std::string& m)
      : Error("undefined-conditional", m) {}
};

struct NoOverlapError : Error {
  explicit NoOverlapError(const std::string& m) : Error("no-overlap", m) {}
};

struct CoverageError : Error {
  explicit CoverageError(const std::string& m) : Error("coverage", m) {}
};

}  // namespace dcin
