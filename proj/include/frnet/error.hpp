#pragma once

#include <stdexcept>
#include <string>

namespace frnet {

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes: numeric failures -> 3, everything else -> 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents (sizes, magic numbers, unparsable values).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input carrying invalid data (NaN coordinates, unlabeled scans).
class DataError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProjectionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient, failed gradient check.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace frnet
