#pragma once

#include <stdexcept>
#include <string>

namespace voxelenc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input: shapes, ranges, malformed files, violated invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing file, short write, unreadable directory).
class IoError : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename E = ValidationError>
inline void require(bool condition, const std::string& message) {
  if (!condition) throw E(message);
}

}  // namespace detail
}  // namespace voxelenc
