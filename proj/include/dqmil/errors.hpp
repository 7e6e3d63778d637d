#pragma once

#include <stdexcept>
#include <string>

namespace dqmil {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or widths.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Scalar argument outside its admissible range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf observed at an op boundary.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Misuse of the call protocol, e.g. backward on a non-scalar.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Operation issued in the wrong lifecycle state.
class StateError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class LabelError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file; the message carries the byte offset.
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class StratificationError : public Error {
public:
    using Error::Error;
};

class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

/// Training stopped because a loss or gradient went non-finite.
class TrainingAbort : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dqmil
