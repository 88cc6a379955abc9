#pragma once

#include <stdexcept>
#include <string>

namespace v2gsim {

/// Base of every error raised by the simulator.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or distribution parameters. Maps to CLI exit code 2.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A requested power or state lies outside what an EV can physically do.
class PhysicsViolation : public Error {
public:
    using Error::Error;
};

/// A caller broke a documented precondition.
class ContractViolation : public Error {
public:
    using Error::Error;
};

class NotIndexable : public Error {
public:
    using Error::Error;
};

class UndefinedAverage : public Error {
public:
    using Error::Error;
};

class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// Feedback would drive some state occupancy negative.
class FeedbackInfeasible : public Error {
public:
    using Error::Error;
};

/// No assignment of EVs to target states exists for the requested counts.
class AssignmentInfeasible : public Error {
public:
    AssignmentInfeasible(const std::string& what, int column) : Error(what), column_(column) {}
    int column() const noexcept { return column_; }

private:
    int column_;
};

/// A fabricated measurement would trip the per-EV feasibility check.
class StealthViolation : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class InternalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace v2gsim
