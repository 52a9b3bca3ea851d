#pragma once

#include <stdexcept>
#include <string>

namespace cotcheck {

// Malformed input text: JSONL lines, arithmetic expressions, model specs.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Well-formed input that violates a documented invariant or precondition.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Mathematically undefined request (division by zero, n = 0 test, ...).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Endpoint / filesystem transport failure. status is the HTTP status when
// one applies, otherwise 0.
struct TransportError : std::runtime_error {
    int status;
    explicit TransportError(const std::string& what, int status_code = 0)
        : std::runtime_error(what), status(status_code) {}
};

}  // namespace cotcheck
