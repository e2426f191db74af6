#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prefopt {

// Invalid argument to a numerical routine (unknown id, non-finite input, bad shape).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// pi* has several maxima for a prompt, so its mode is undefined.
class TieError : public DomainError {
public:
    using DomainError::DomainError;
};

// A check was asked to run on a world it is not defined for.
class PreconditionError : public DomainError {
public:
    using DomainError::DomainError;
};

// Configuration file could not be parsed or failed validation. The message
// starts with the offending field path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss or gradient.
class TrainingAbort : public std::runtime_error {
public:
    TrainingAbort(std::size_t step, double value, const std::string& what)
        : std::runtime_error("training aborted at step " + std::to_string(step) + ": " + what +
                             " = " + std::to_string(value)),
          step_(step),
          value_(value) {}

    // Same abort, message prefixed with where it happened.
    TrainingAbort(const std::string& context, const TrainingAbort& inner)
        : std::runtime_error(context + ": " + inner.what()), step_(inner.step_), value_(inner.value_) {}

    std::size_t step() const noexcept { return step_; }
    double value() const noexcept { return value_; }

private:
    std::size_t step_;
    double value_;
};

}  // namespace prefopt
