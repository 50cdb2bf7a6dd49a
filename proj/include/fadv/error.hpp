#pragma once

#include <stdexcept>
#include <string>

namespace fadv {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an input or an intermediate value is NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class CorruptFileError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  VersionError(const std::string& what, int found, int expected)
      : FormatError(what), found_(found), expected_(expected) {}
  int found() const { return found_; }
  int expected() const { return expected_; }

 private:
  int found_;
  int expected_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Inputs that make the requested quantity undefined (source == guide,
/// zero-length denominators, coincident reference points...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NoAdversaryError : public Error {
 public:
  NoAdversaryError(const std::string& what, double best_margin)
      : Error(what), best_margin_(best_margin) {}
  /// Largest (target score - best other score) seen over the search.
  double best_margin() const { return best_margin_; }

 private:
  double best_margin_;
};

}  // namespace fadv
