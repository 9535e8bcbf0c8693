#pragma once

#include <stdexcept>
#include <string>

namespace align_lab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite entries where finite ones are required.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

class DecompositionError : public Error {
public:
    using Error::Error;
};

/// No singular direction survived the rank cutoff.
class EmptyRankError : public Error {
public:
    using Error::Error;
};

/// Loss or state blew up during an iteration.
class DivergenceError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Matrix that must be invertible is (numerically) singular.
class RankError : public Error {
public:
    using Error::Error;
};

class CertificateError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated input file.
class FormatError : public Error {
public:
    using Error::Error;
};

class DataMissingError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace align_lab
