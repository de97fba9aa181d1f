#pragma once

#include <stdexcept>
#include <string>

namespace fslcast {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated (bad length, bad k, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The input has zero variance or zero energy where a scale is required.
class DegenerateSeries : public Error {
public:
    using Error::Error;
};

/// Sample entropy has no matching template pairs at length m or m+1.
class UndefinedEntropy : public Error {
public:
    using Error::Error;
};

/// A recursive forecast produced a non-finite value.
class DivergedForecast : public Error {
public:
    using Error::Error;
};

/// Malformed input data (CSV rows, columns, timestamps).
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace fslcast
