#pragma once

#include <stdexcept>
#include <string>

namespace residua {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/geometry mismatch: incompatible shapes, bad dimensions.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid argument value (negative std, bad threshold, empty grid, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (bad magic, truncation, non-binary mask, ...).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure: missing file, unreadable/unwritable path.
class IoError : public Error {
public:
    using Error::Error;
};

/// Dataset contract violation (anomalous record in a training split, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Stale or mismatched state (backward with a foreign cache, ...).
class StateError : public Error {
public:
    using Error::Error;
};

} // namespace residua
