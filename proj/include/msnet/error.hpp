#pragma once

#include <stdexcept>
#include <string>

namespace msnet {

/// Base of every error the library raises for bad input or violated
/// preconditions. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, long long instance_id = -1)
      : Error(what), instance_id_(instance_id) {}

  /// Offending instance id, or -1 when the error is not tied to one.
  long long instance_id() const { return instance_id_; }

 private:
  long long instance_id_;
};

}  // namespace msnet
