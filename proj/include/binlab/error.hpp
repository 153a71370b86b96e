#pragma once

#include <stdexcept>
#include <string>

namespace binlab {

// Bad argument to an operation (shape mismatch, out-of-range parameter).
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// File could not be opened, read or written.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File was readable but its content is not a supported raster / archive.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration, missing dataset directory, empty pool, unknown key.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf encountered in a training loss.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace binlab
