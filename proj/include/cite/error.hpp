#pragma once

#include <stdexcept>
#include <string>

namespace cite {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes (config 2, data 3, numeric 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NumericError : public Error { using Error::Error; };
class ModeError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };

// Malformed or inconsistent input files.
class DataError : public Error { using Error::Error; };
class CorruptionError : public DataError { using DataError::DataError; };
class IntegrityError : public DataError { using DataError::DataError; };

// Checkpoint tensor shape disagrees with the requested configuration.
class ShapeError : public ConfigError { using ConfigError::ConfigError; };

}  // namespace cite
