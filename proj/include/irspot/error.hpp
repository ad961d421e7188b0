#pragma once

#include <stdexcept>
#include <string>

namespace irspot {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ImageError : public Error {
public:
    using Error::Error;
};

/// Raised when an input violates a documented invariant. `field` names the
/// offending member (e.g. "spots[2].sigma") so callers can report it precisely.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& message)
        : Error(message), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Embedding or landmark oracle failure: unreachable, timed out, malformed reply.
class OracleError : public Error {
public:
    using Error::Error;
};

}  // namespace irspot
