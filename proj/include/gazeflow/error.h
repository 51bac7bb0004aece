#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gazeflow {

// Base for all library errors. The CLI maps the concrete kinds onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
    explicit ParseError(const std::string& what) : Error(what), line_(0) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Data violates a documented invariant (timestamps, ranges, spans).
class ValidationError : public Error {
public:
    using Error::Error;
};

// Operation is undefined for the given input (too short, wrong rate, bad length).
class DomainError : public Error {
public:
    using Error::Error;
};

// Caller broke a precondition on arguments or call order.
class UsageError : public Error {
public:
    using Error::Error;
};

// Optimisation produced non-finite values.
class TrainingError : public Error {
public:
    using Error::Error;
};

// Reading or writing an external resource failed (file, socket, stream sink).
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace gazeflow
