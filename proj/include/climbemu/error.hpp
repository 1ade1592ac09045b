#pragma once

#include <stdexcept>
#include <string>

namespace climbemu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input data (CSV content, schema, trajectory invariants).
class DataError : public Error {
public:
    using Error::Error;
};

/// A caller supplied arguments that violate an operation's preconditions.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// exp(W(s)) would overflow; `where` is the offending normalized time.
class QuadratureOverflow : public Error {
public:
    QuadratureOverflow(double where, double value)
        : Error("quadrature overflow: W(" + std::to_string(where) + ") = " + std::to_string(value)),
          s(where), w(value) {}
    double s;
    double w;
};

class NotReachedWithinHorizon : public Error {
public:
    using Error::Error;
};

class NotPositiveDefinite : public Error {
public:
    using Error::Error;
};

class TooManyNonMonotoneDraws : public Error {
public:
    TooManyNonMonotoneDraws(std::string msg, std::size_t accepted_draws, std::size_t rejected_draws)
        : Error(std::move(msg)), accepted(accepted_draws), rejected(rejected_draws) {}
    std::size_t accepted;
    std::size_t rejected;
};

class InsufficientSamples : public Error {
public:
    InsufficientSamples(std::string msg, double at_level)
        : Error(std::move(msg)), level(at_level) {}
    double level;
};

/// Skill score against a point baseline whose arrival equals the observation.
class BaselineExact : public Error {
public:
    using Error::Error;
};

/// Internal consistency check failed (e.g. full-rank PCA reconstruction worse than the fit).
class InternalInconsistency : public Error {
public:
    using Error::Error;
};

/// Error tagged with the pipeline stage it happened in.
class StageError : public Error {
public:
    StageError(std::string stage_name, const std::string& what)
        : Error(stage_name + ": " + what), stage(std::move(stage_name)) {}
    std::string stage;
};

} // namespace climbemu
