#pragma once

#include <stdexcept>
#include <string>

namespace jsdmp {

// Every error carries a short machine-greppable code; what() is "CODE: message".
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& m) : Error("E_DIM", m) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& m) : Error("E_DOMAIN", m) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& m) : Error("E_INDEX", m) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("E_CONFIG", m) {}
};
struct StateError : Error {
  explicit StateError(const std::string& m) : Error("E_STATE", m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error("E_NUMERIC", m) {}
};
struct LoadError : Error {
  explicit LoadError(const std::string& m) : Error("E_LOAD", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("E_FORMAT", m) {}
};

}  // namespace jsdmp
