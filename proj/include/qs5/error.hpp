#pragma once

#include <stdexcept>
#include <string>

namespace qs5 {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid bit width or an unrepresentable scale.
struct QuantError : Error {
  using Error::Error;
};

// Checked integer accumulation left the int32 range.
struct OverflowError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

// Malformed, truncated or corrupted model file.
struct FormatError : Error {
  using Error::Error;
};

struct UnsupportedError : Error {
  using Error::Error;
};

struct NonFiniteError : Error {
  using Error::Error;
};

}  // namespace qs5
