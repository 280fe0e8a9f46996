#pragma once

#include <stdexcept>
#include <string>

namespace deepid {

// Base class for everything this library throws.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/matrix dimension mismatches.
class shape_error : public error {
public:
    using error::error;
};

// Bad scalar arguments (out-of-range labels, invalid strides, ...).
class argument_error : public error {
public:
    using error::error;
};

// Non-finite values, singular matrices.
class numeric_error : public error {
public:
    using error::error;
};

// Invalid configuration (files or structs).
class config_error : public error {
public:
    using error::error;
};

// File I/O and format problems.
class io_error : public error {
public:
    using error::error;
};

// Evaluation-protocol violations (identity overlap, empty probe sets, ...).
class protocol_error : public error {
public:
    using error::error;
};

// A sampler could not satisfy its request from the data it was given.
class sampling_error : public error {
public:
    using error::error;
};

} // namespace deepid
