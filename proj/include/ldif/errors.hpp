#pragma once

#include <stdexcept>
#include <string>

namespace ldif {

// Base of every error the library raises. The CLI maps subclasses onto
// process exit codes: usage/config -> 1, data -> 2, numerical -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ldif
