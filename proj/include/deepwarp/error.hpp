#pragma once

#include <stdexcept>
#include <string>

namespace deepwarp {

/// Base of every error thrown by the library. `code()` is a stable,
/// machine-readable identifier used by the CLI when reporting failures.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class DegenerateDataError : public Error {
 public:
  explicit DegenerateDataError(const std::string& what)
      : Error("degenerate_data", what) {}
};

/// A warping layer collapsed the knots along one output dimension.
class DegenerateWarpError : public Error {
 public:
  DegenerateWarpError(int layer, const std::string& what)
      : Error("degenerate_warp", what), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

class InvalidParameterError : public Error {
 public:
  explicit InvalidParameterError(const std::string& what)
      : Error("invalid_parameter", what) {}
};

class IllConditionedError : public Error {
 public:
  explicit IllConditionedError(const std::string& what)
      : Error("ill_conditioned", what) {}
};

class InvalidPartitionError : public Error {
 public:
  explicit InvalidPartitionError(const std::string& what)
      : Error("invalid_partition", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line = -1)
      : Error("parse_error", line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Locations or columns that must agree between two inputs do not.
class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& what) : Error("mismatch", what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io_error", what) {}
};

}  // namespace deepwarp
