#pragma once

#include <stdexcept>
#include <string>

namespace peos {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller violated an operation's precondition (bad parameter, size mismatch).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Input is well-formed but mathematically degenerate (zero vector, u == v).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// File contents do not follow the expected layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Index file checksum mismatch.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace peos
