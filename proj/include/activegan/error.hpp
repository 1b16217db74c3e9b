#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace activegan {

// Root of every error the library throws. Callers that only care about
// "something went wrong in activegan" catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shapes or dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Argument outside the mathematical domain of an operation (log of a
// non-positive value and the like).
class DomainError : public Error {
public:
    using Error::Error;
};

// A NaN or infinity appeared where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

// Binary or text input does not follow the expected layout.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    explicit FormatError(const std::string& what) : Error(what) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_ = 0;
};

// File ended before the declared payload was read.
class LengthError : public FormatError {
public:
    using FormatError::FormatError;
};

// Two inputs that must agree (e.g. image and label counts) do not.
class ConsistencyError : public Error {
public:
    using Error::Error;
};

// Configuration failed validation. The message lists every violated field.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t iteration)
        : Error(what), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

}  // namespace activegan
