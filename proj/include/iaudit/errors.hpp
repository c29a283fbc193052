#pragma once

#include <stdexcept>
#include <string>

namespace iaudit {

// Violated operation precondition (bad shapes, bad fractions, unknown names).
class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Non-finite value produced during numerical work.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File could not be parsed or failed validation.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Remote target service could not be reached or answered garbage.
class ServiceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Target service refused a query because its budget is spent.
class BudgetExhausted : public ServiceError {
public:
    BudgetExhausted(const std::string& what, long long remaining)
        : ServiceError(what), remaining_(remaining) {}
    long long remaining() const noexcept { return remaining_; }

private:
    long long remaining_;
};

// Attack cannot be carried out against this service (missing endpoint, missing attribute).
class InfeasibleAttack : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace iaudit
