#ifndef RELIGHT_ERRORS_HPP
#define RELIGHT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace relight {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, shape mismatch or bad argument.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File missing, unreadable, corrupt or unwritable.
class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite values, rank deficiency and similar numerical failures.
class NumericError : public Error {
public:
    using Error::Error;
};

/// A checkpoint does not match the configuration it is used with.
class CheckpointMismatch : public Error {
public:
    using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message)
{
    if (!condition)
        throw ConfigError(message);
}

} // namespace detail

} // namespace relight

#endif // RELIGHT_ERRORS_HPP
