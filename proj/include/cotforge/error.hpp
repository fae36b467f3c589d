#pragma once

#include <stdexcept>
#include <string>

namespace cotforge {

enum class ErrorKind {
  io,
  schema,
  duplicate_id,
  invariant,
  spec_mismatch,
  config,
  data,
  auth,
  exhausted_retries,
  script_miss,
  transient,
  length_mismatch,
  group_too_small,
  numeric,
};

const char* to_string(ErrorKind kind);

// Stable CLI contract: 0 success, 1 config error, 2 backend failure, 3 data error.
int exit_code_for(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Malformed row or document; `line` is 1-based, 0 when not line-addressable.
class SchemaError : public Error {
 public:
  SchemaError(int line, std::string field, const std::string& message)
      : Error(ErrorKind::schema, message), line_(line), field_(std::move(field)) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  int line_;
  std::string field_;
};

class DuplicateIdError : public Error {
 public:
  DuplicateIdError(std::string id, const std::string& message)
      : Error(ErrorKind::duplicate_id, message), id_(std::move(id)) {}

  const std::string& id() const { return id_; }

 private:
  std::string id_;
};

class RetryExhaustedError : public Error {
 public:
  RetryExhaustedError(int last_status, const std::string& message)
      : Error(ErrorKind::exhausted_retries, message), last_status_(last_status) {}

  // HTTP status of the last failed attempt; 0 for transport-level failures.
  int last_status() const { return last_status_; }

 private:
  int last_status_;
};

}  // namespace cotforge
