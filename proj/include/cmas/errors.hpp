#pragma once

#include <stdexcept>
#include <string>

namespace cmas {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch in a tensor operation.
struct ShapeError : Error {
  using Error::Error;
};

// Misuse of the tape (loss not on tape, loss not scalar, ...).
struct TapeError : Error {
  using Error::Error;
};

// Missing or invalid gradient, or a non-finite value met while probing.
struct GradientError : Error {
  using Error::Error;
};

// Two-phase ordering violated (cross training on unfrozen auto-encoders).
struct PhaseError : Error {
  using Error::Error;
};

// Broken associator chain (modality ids do not line up).
struct ChainError : Error {
  using Error::Error;
};

// Dataset-level problem (missing class, bad labels, empty split).
struct DataError : Error {
  using Error::Error;
};

// File-format or filesystem failure.
struct IoError : Error {
  using Error::Error;
};

// Bad key=value config input.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace cmas
