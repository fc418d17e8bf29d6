#pragma once

#include <stdexcept>
#include <string>

namespace shiftlab {

// Dimension or layout mismatch between objects that must agree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A value outside its documented domain (bad epoch index, empty input, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed external text: CSV rows, config files, checkpoints.
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Filesystem failure (unreadable / unwritable path).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config violation: unknown key, invalid value, missing section.
// The CLI maps this (and ParseError on configs) to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A metric denominator is identically zero.
struct DenominatorError : std::domain_error {
  using std::domain_error::domain_error;
};

// Uncertainty rejection removed every sample.
struct EmptyRetentionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace shiftlab
