#pragma once

#include <stdexcept>
#include <string>

namespace fusion {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or rejected API credentials. Never retried.
class AuthError : public Error {
public:
    using Error::Error;
};

/// Network-level failure or retry budget exhausted on transient errors.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Endpoint answered, but the payload violates the expected shape.
class ProtocolError : public Error {
public:
    using Error::Error;
};

/// Model output could not be parsed into the expected format.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Parsed value falls outside its allowed range.
class RangeError : public Error {
public:
    using Error::Error;
};

/// Candidate pool could not be built (every sample failed).
class PoolError : public Error {
public:
    using Error::Error;
};

/// An operation that requires candidates received none.
class EmptyPoolError : public Error {
public:
    using Error::Error;
};

/// A score is NaN or infinite.
class InvalidScoreError : public Error {
public:
    using Error::Error;
};

/// No answer marker found in a model response.
class NoAnswerError : public Error {
public:
    using Error::Error;
};

/// An aggregate was requested over zero elements.
class EmptySetError : public Error {
public:
    using Error::Error;
};

/// Two inputs that must align (counts, ids) do not.
class MismatchError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem or serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace fusion
