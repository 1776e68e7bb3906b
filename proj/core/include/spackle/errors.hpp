#pragma once

#include <stdexcept>
#include <string>

namespace spackle {

// Error taxonomy. The CLI maps these onto its exit codes, so every module
// throws the most specific class that applies.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or missing on-disk artifacts (manifest, TSV layout, checkpoints).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Cross-file or cross-slide invariants broken (gene list mismatch, split map).
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

// Values that parse but are unusable (NaN expression, negative counts).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Bad configuration keys or values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Training divergence and related failures.
class TrainError : public Error {
 public:
  using Error::Error;
};

// Checkpoint / dataset gene-panel mismatch.
class ModelMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace spackle
