#pragma once

#include <stdexcept>
#include <string>

namespace crel {

// Error taxonomy shared by all pipeline stages. Every failure surfaced to a
// caller carries enough context (file, line number, token) to act on.

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input data (bad JSON line, bad .vec header, ...).
class ParseError : public Error {
public:
    using Error::Error;
};

// Structurally valid input that violates a contract (duplicate code,
// overlapping spans, out-of-range offsets).
class ValidationError : public Error {
public:
    using Error::Error;
};

// A referenced entity does not exist (unknown code, OOV concept token).
class LookupError : public Error {
public:
    using Error::Error;
};

// Bad configuration or arguments.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A sampling procedure could not satisfy its contract within bounded retries.
class GenerationError : public Error {
public:
    using Error::Error;
};

// Filesystem failures, reported with the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace crel
