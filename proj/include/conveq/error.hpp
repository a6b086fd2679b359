#pragma once

#include <stdexcept>
#include <string>

namespace conveq {

/// Input violates a documented precondition (bad dimension, non-integrable
/// profile, malformed spec, ...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A resource budget (grid cells, series terms, ...) would be exceeded.
class BudgetExceeded : public std::runtime_error {
public:
    BudgetExceeded(const std::string& what, double achieved)
        : std::runtime_error(what), achieved_(achieved) {}
    double achieved() const noexcept { return achieved_; }

private:
    double achieved_;
};

/// Adaptive quadrature hit its refinement limit before meeting tolerance.
/// Carries the best value obtained so far.
class QuadratureError : public std::runtime_error {
public:
    QuadratureError(const std::string& what, double partial, double error)
        : std::runtime_error(what), partial_(partial), error_(error) {}
    double partial() const noexcept { return partial_; }
    double error_estimate() const noexcept { return error_; }

private:
    double partial_;
    double error_;
};

} // namespace conveq
