#pragma once

#include <stdexcept>
#include <string>

namespace fdf {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape or length disagreement between operands.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Invalid construction parameters (filter specs, configs).
class SpecError : public Error {
public:
  using Error::Error;
};

class TrainingError : public Error {
public:
  using Error::Error;
};

// Malformed or insufficient input data.
class DataError : public Error {
public:
  using Error::Error;
};

// Key issuance problems, including rank-deficient projection bases.
class KeyError : public Error {
public:
  using Error::Error;
};

class IdentityError : public Error {
public:
  using Error::Error;
};

class RevokedError : public Error {
public:
  using Error::Error;
};

// Model or record file that cannot be decoded.
class LoadError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class IngestError : public Error {
public:
  using Error::Error;
};

class ProtocolError : public Error {
public:
  using Error::Error;
};

// A metric or score that is mathematically undefined for its inputs.
class UndefinedMetricError : public Error {
public:
  using Error::Error;
};

class NormalizationError : public Error {
public:
  using Error::Error;
};

} // namespace fdf
