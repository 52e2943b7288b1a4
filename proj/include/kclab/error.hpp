#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kclab {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented structural rule (duplicate keys, non-contiguous
/// attempts, bad field values).
class ValidationError : public Error {
public:
  using Error::Error;
};

/// Cross-table reference is dangling (unknown problem, unknown KC, ...).
class IntegrityError : public Error {
public:
  using Error::Error;
};

/// A text payload could not be parsed (CSV row, JSON, LLM output).
class ParseError : public Error {
public:
  using Error::Error;
};

/// Caller did not meet an operation's precondition.
class PreconditionError : public Error {
public:
  using Error::Error;
};

/// Lookup of a key that does not exist (embedding id, KC id, ...).
class NotFoundError : public Error {
public:
  using Error::Error;
};

/// A pipeline stage ran before the artifacts it depends on were produced.
class PrerequisiteError : public Error {
public:
  using Error::Error;
};

/// Numerical procedure produced NaN/inf.
class NumericalError : public Error {
public:
  using Error::Error;
};

class GatewayError : public Error {
public:
  using Error::Error;
};

class AuthenticationError : public GatewayError {
public:
  using GatewayError::GatewayError;
};

/// Retryable provider failure (connection refused, timeouts, 429, 5xx).
class TransientError : public GatewayError {
public:
  using GatewayError::GatewayError;
};

/// Non-retryable provider failure; message carries the provider's text verbatim.
class ProviderError : public GatewayError {
public:
  using GatewayError::GatewayError;
};

class MalformedPayloadError : public GatewayError {
public:
  using GatewayError::GatewayError;
};

/// Transient failures persisted through every allowed retry.
class RetriesExhaustedError : public GatewayError {
public:
  using GatewayError::GatewayError;
};

/// Joins a list of offenders into "a, b, c" for error messages, truncated after `limit`.
std::string join_offenders(const std::vector<std::string>& items, std::size_t limit = 10);

}  // namespace kclab
