#pragma once

#include <stdexcept>
#include <string>

namespace toolcoach {

/// Base class for all toolcoach errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration detected before any work started.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// The backend does not support the requested operation.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// A completion is outside the policy's scoreable support.
class OutOfSupportError : public Error {
public:
    using Error::Error;
};

/// Non-finite values encountered where finite math is required.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A serialized record could not be decoded.
class DecodeError : public Error {
public:
    using Error::Error;
};

/// External backend transport failure after bounded retries.
class TransportError : public Error {
public:
    using Error::Error;
};

/// The ranking judge failed to produce a usable ranking.
class JudgeError : public Error {
public:
    using Error::Error;
};

/// A caller violated an operation precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace toolcoach
