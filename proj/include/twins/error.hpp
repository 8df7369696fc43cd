#pragma once

#include <stdexcept>
#include <string>

namespace twins {

// Base class for every error raised by this library. Each subclass names a
// failure category; CLI exit codes are derived from the category, so new
// error sites should pick the closest existing subclass.
class TwinsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unreadable, unsupported, or corrupt audio input.
class InvalidAudioError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Caller passed a value or shape outside an operation's contract.
class InvalidInputError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Augmentation policy is malformed (unknown op, bad probability, ...).
class InvalidPolicyError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Tensor or matrix dimensions do not line up.
class ShapeError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Non-finite values where finite ones are required, or divergence during
// training. Message carries the location (epoch/step) when known.
class NumericError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Bad configuration file or inconsistent config values.
class ConfigError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// A forward cache was reused with parameters it was not built from.
class CacheError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Dataset or manifest problems (missing split, duplicate path, no items).
class DataError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Stratified subsampling cannot satisfy its per-class guarantees.
class SubsampleError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Serialized artifact (checkpoint, feature file, report) is malformed.
class FormatError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

// Serialized artifact has a format version this build cannot read.
class VersionError : public TwinsError {
 public:
  using TwinsError::TwinsError;
};

}  // namespace twins
