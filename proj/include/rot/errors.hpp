#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rot {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input that parses but violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad tunable, mismatched provider/dimension, or an unusable setup.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Network-level failure (connect, timeout, truncated read). Retryable.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Evaluation stopped after too many consecutive transport failures. Records
/// written so far are kept and the run can be resumed.
class RunAborted : public TransportError {
 public:
  using TransportError::TransportError;
};

/// Server answered with a non-success HTTP status.
class HttpStatusError : public Error {
 public:
  HttpStatusError(int status, std::string body_excerpt)
      : Error("HTTP " + std::to_string(status) + ": " + body_excerpt),
        status_(status),
        body_(std::move(body_excerpt)) {}
  int status() const noexcept { return status_; }
  const std::string& body_excerpt() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

/// One or more texts could not be embedded. `failed_indices` index the input batch.
class EmbeddingError : public Error {
 public:
  EmbeddingError(const std::string& what, std::vector<std::size_t> failed, bool retryable = false)
      : Error(what), failed_(std::move(failed)), retryable_(retryable) {}
  const std::vector<std::size_t>& failed_indices() const noexcept { return failed_; }
  /// True when every failure was a transport error (provider unreachable).
  bool retryable() const noexcept { return retryable_; }

 private:
  std::vector<std::size_t> failed_;
  bool retryable_;
};

/// Filtering left no entry node; callers fall back to plain chain-of-thought.
class NoTemplateFound : public Error {
 public:
  using Error::Error;
};

/// Serialized artifact written by an incompatible format version.
class FormatVersionError : public Error {
 public:
  using Error::Error;
};

/// Lookup of an unknown key (model id, node id, problem id).
class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace rot
