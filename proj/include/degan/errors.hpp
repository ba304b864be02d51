#pragma once

#include <stdexcept>
#include <string>

namespace degan {

/// Base class for every error raised by the library. Each subclass maps to a
/// distinct CLI exit code (see tools/degan_cli.cpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or image shapes that do not fit together.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A class label outside its valid range.
class LabelError : public Error {
public:
    using Error::Error;
};

/// A precondition on arguments was violated (empty batch, non-scalar loss, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Unreadable, unwritable or malformed file.
class IoError : public Error {
public:
    using Error::Error;
};

/// Operation not valid in the object's current state (e.g. untrained model).
class StateError : public Error {
public:
    using Error::Error;
};

/// Training data that cannot support the requested fit (e.g. a single class).
class DegenerateDataError : public Error {
public:
    using Error::Error;
};

/// Bad configuration key or value.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace degan
