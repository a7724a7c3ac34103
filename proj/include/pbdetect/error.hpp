#pragma once

#include <stdexcept>
#include <string>

namespace pbdetect {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameter or configuration value.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed input text or bytes. `location()` is a 1-based line number for
/// text formats and a byte offset for binary ones.
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t location)
      : Error(what), location_(location) {}

  std::size_t location() const noexcept { return location_; }

private:
  std::size_t location_;
};

class EmptyTraceError : public Error {
public:
  using Error::Error;
};

/// Streaming contract violated (out-of-order samples, non-monotone time).
class StreamError : public Error {
public:
  using Error::Error;
};

/// The emulated memory budget cannot accommodate a request.
class CapacityError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

class MalformedWaveletError : public Error {
public:
  using Error::Error;
};

/// A correlation or distance is undefined for the given input
/// (e.g. zero variance, too few samples).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Learning period could not produce a usable model.
class TrainingError : public Error {
public:
  using Error::Error;
};

/// Model file corrupt, truncated, or of an unsupported version.
class ModelFormatError : public Error {
public:
  using Error::Error;
};

}  // namespace pbdetect
