#pragma once

#include <stdexcept>
#include <string>

namespace ceval {

// Base type for all library errors so the CLI boundary can catch one thing.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
    using Error::Error;
};

struct PreconditionError : Error {
    using Error::Error;
};

// Malformed files: bad magic, truncation, schema problems. Messages carry the
// byte offset or field name where the problem was found.
struct IoError : Error {
    using Error::Error;
};

struct VersionError : IoError {
    using IoError::IoError;
};

// Training loss became non-finite.
struct DivergenceError : Error {
    using Error::Error;
};

// No perturbation in the configured search flipped the label.
struct AttackFailed : Error {
    using Error::Error;
};

// Every feature is frozen; there is nothing to perturb.
struct AllFrozen : Error {
    using Error::Error;
};

// An attack backend failed while computing the metric. Deliberately distinct
// from the +inf value reserved for full-input explanations.
struct MetricUnavailable : Error {
    using Error::Error;
};

// Brute-force search exhausted its radius without flipping the label.
struct NoFlipFound : Error {
    using Error::Error;
};

}  // namespace ceval
