#pragma once

#include <stdexcept>
#include <string>

namespace patchrec {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Shape or position-count violations (matmul mismatch, layout overflow, ...).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Malformed or inconsistent input data (files, catalogs, interaction logs).
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration values or unsatisfiable plan wiring.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Non-finite values encountered where the pipeline requires finite numbers.
class NumericsError : public Error {
public:
    using Error::Error;
};

/// Checkpoint manifest/blob disagreement or truncation.
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// A user has no interactions strictly before the requested anchor.
class EmptyHistoryError : public Error {
public:
    using Error::Error;
};

} // namespace patchrec
