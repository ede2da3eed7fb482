#pragma once

#include <stdexcept>
#include <string>

namespace cunsb {

// Error categories line up with the CLI exit codes.
enum class ErrorKind : int {
  kUsage = 1,
  kData = 2,
  kCheckpoint = 3,
  kInternal = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error(ErrorKind::kCheckpoint, what) {}
};

}  // namespace cunsb
