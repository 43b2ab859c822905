#pragma once

#include <stdexcept>
#include <string>

namespace policyfx {

/// Error classes map one-to-one onto CLI exit codes.
enum class ErrorKind { Parse = 2, Validation = 3, Numerical = 4, Io = 5 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Malformed input text (bad date, non-numeric field, missing column).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(ErrorKind::Parse, what) {}
};

/// Well-formed input that violates a precondition or invariant.
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

/// Rank-deficient designs, degenerate clusterings.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

}  // namespace policyfx
