// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace phiotdr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parameter set violates its invariants (rejected at construction/validation).
class ConstructionError : public Error {
public:
    using Error::Error;
};

/// Operation called with an argument outside its precondition.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Fiber longer than the pulse period allows.
class RangeError : public Error {
public:
    RangeError(const std::string& what, double limit_m) : Error(what), limit_m_(limit_m) {}
    double limit_m() const noexcept { return limit_m_; }

private:
    double limit_m_;
};

/// Non-finite or otherwise unusable numeric data.
class DataError : public Error {
public:
    using Error::Error;
};

/// File content does not match the expected binary/text format.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace phiotdr
