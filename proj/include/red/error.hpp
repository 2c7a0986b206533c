#pragma once

#include <stdexcept>
#include <string>

namespace red {

// Categories map one-to-one onto CLI exit codes and C API status codes.
enum class ErrorKind { kUsage, kShape, kData, kNumeric, kIo };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};
struct UsageError : Error {
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

const char* error_kind_name(ErrorKind kind) noexcept;

}  // namespace red
