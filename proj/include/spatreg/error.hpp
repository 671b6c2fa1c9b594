#pragma once

#include <stdexcept>
#include <string>

namespace spatreg {

/// Base class for everything thrown by this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed run configuration or invalid argument combinations. CLI exit code 2.
class config_error : public error {
public:
    explicit config_error(const std::string& msg) : error(msg) {}
};

/// Bad input data: parse failures, missing columns, invariant violations. CLI exit code 3.
class data_error : public error {
public:
    explicit data_error(const std::string& msg) : error(msg) {}
};

/// Numerical failure: rank deficiency, optimizer breakdown, non-finite criteria. CLI exit code 4.
class numeric_error : public error {
public:
    explicit numeric_error(const std::string& msg) : error(msg) {}
};

} // namespace spatreg
