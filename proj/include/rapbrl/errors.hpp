#pragma once

#include <stdexcept>
#include <string>

namespace rapbrl {

/// Index or dimension mismatch between two objects that should agree.
class StructuralError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An operation was called on inputs outside its documented precondition.
class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A history tree (or tree x grid product) would exceed the configured node cap.
class CapacityError : public std::length_error {
public:
    using std::length_error::length_error;
};

/// A scalar argument is outside the mathematical domain of the function.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A reward model produces values outside [0, 1] or violates its norm bound.
class ModelValidityError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// The requested objective/embedding combination has no exact planner.
class UnsupportedError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

} // namespace rapbrl
