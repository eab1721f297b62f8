#pragma once

#include <stdexcept>
#include <string>

namespace csmf {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension or index disagreement between containers that must align.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid configuration value or malformed configuration document.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Input data violates a documented invariant (cascade rule, vocabulary, ...).
class DataError : public Error {
public:
    using Error::Error;
};

// Unreadable or structurally broken serialized artifact.
class ParseError : public Error {
public:
    using Error::Error;
};

// Operation invoked outside the legal parameter-lifecycle order.
class LifecycleError : public Error {
public:
    using Error::Error;
};

// Non-finite or otherwise unusable numeric value where one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Filesystem failure (open, read, write).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace csmf
