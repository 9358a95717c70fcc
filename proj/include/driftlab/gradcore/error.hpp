#pragma once

#include <stdexcept>
#include <string>

namespace dlab {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, shapes or ranges.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Unknown conditioning token or concept id.
class TokenError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or numerically invalid matrices.
class NumericsError : public Error {
public:
    using Error::Error;
};

/// Input that carries no usable signal (e.g. every pixel is black).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double last_error)
        : Error(what), last_error_(last_error) {}
    double last_error() const noexcept { return last_error_; }

private:
    double last_error_;
};

/// A pipeline stage needed by the caller has not been produced yet.
class DependencyError : public Error {
public:
    explicit DependencyError(std::string stage)
        : Error("missing dependency stage: " + stage), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace dlab
