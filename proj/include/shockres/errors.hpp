#pragma once

#include <stdexcept>
#include <string>

namespace shockres {

// Failure categories map one-to-one onto CLI exit codes.
enum class ErrorKind { config = 2, data = 3, numeric = 4, convergence = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct ConvergenceError : Error {
  explicit ConvergenceError(const std::string& what) : Error(ErrorKind::convergence, what) {}
};

}  // namespace shockres
