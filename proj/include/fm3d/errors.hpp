#pragma once

#include <stdexcept>
#include <string>

namespace fm3d {

// Base of every error the library throws. Subclasses map onto the failure
// classes callers are expected to tell apart (CLI exit codes, HTTP status).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Raised when disentangled training is asked to pair samples that do not
// share an identity (e.g. a dataset built with M == 1).
class PairingError : public Error {
public:
    using Error::Error;
};

} // namespace fm3d
