#pragma once

#include <stdexcept>
#include <string>

namespace pagkd {

// Base for every error raised by the library. Each subclass maps to one of the
// error categories in the module contracts.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

// A softmax row with every entry masked out.
class DegenerateRowError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class TapeError : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  using Error::Error;
};

class ArchiveError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

class DataQualityError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol breach, e.g. a held-out image read during training.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace pagkd
