#pragma once

#include <stdexcept>
#include <string>

namespace affinity {

// Base of every error this library throws on contract violations.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes / dimensions do not satisfy an operation's contract.
struct ShapeError : Error {
  using Error::Error;
};

// A scalar argument is out of its valid range (dropout p >= 1, noise >= 0.5, ...).
struct ValueError : Error {
  using Error::Error;
};

// Structurally valid input that an operation cannot process (all-zero mask row,
// empty sequence, empty prediction list).
struct DegenerateInputError : Error {
  using Error::Error;
};

// Malformed JSONL record; message carries the 1-based line number.
struct ParseError : Error {
  using Error::Error;
};

// Token id outside the vocabulary.
struct VocabularyError : Error {
  using Error::Error;
};

// Label outside {0, 1}.
struct LabelError : Error {
  using Error::Error;
};

// A class has too few members for the requested fold count.
struct StratificationError : Error {
  using Error::Error;
};

// Model configuration violates its invariants.
struct ConfigError : Error {
  using Error::Error;
};

// Loss became non-finite; message names epoch and batch.
struct TrainingError : Error {
  using Error::Error;
};

// Metric undefined for the given inputs (e.g. ROC with a single class).
struct MetricError : Error {
  using Error::Error;
};

// Checkpoint load failures, split by cause so callers can tell them apart.
struct CheckpointError : Error {
  using Error::Error;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointManifestError : CheckpointError {
  using CheckpointError::CheckpointError;
};

}  // namespace affinity
