#pragma once

#include <stdexcept>
#include <string>

namespace mmsa {

/// Base class for every error raised by the solver.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A coefficient function returned a non-finite value.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Forward or fundamental-solution simulation produced a non-finite value.
class SimulationError : public Error {
public:
    using Error::Error;
};

/// Conditional-expectation regression failed (rank deficiency, bad basis).
class RegressionError : public Error {
public:
    using Error::Error;
};

/// A requested allocation or enumeration exceeds what can be honoured.
class ResourceError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input (shapes, ranges, unknown names).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

}  // namespace mmsa
