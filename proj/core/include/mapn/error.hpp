#pragma once

#include <stdexcept>
#include <string>

namespace mapn {

/// Invalid shapes, extents, or experiment settings.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, inconsistent, or rejected input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values during training or optimisation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mapn
