#pragma once

#include <stdexcept>
#include <string>

namespace bam {

// Error taxonomy used across the library. Invalid arguments to in-memory
// operations throw std::invalid_argument directly; the types below cover
// failures with an external cause so callers can map them to exit codes.

// Filesystem / stream failures (missing file, short write, ...).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally broken input files (bad header, bad row, truncated payload).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user configuration: unknown/missing keys, out-of-range values,
// contradictory settings. CLI maps this to the usage/config exit code.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced where the numeric contract forbids them
// (diverged training, overflowed gradients). Aborts the run.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace bam
