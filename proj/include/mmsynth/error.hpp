#pragma once

#include <stdexcept>
#include <string>

namespace mmsynth {

// Base for every error raised by the library. Callers that only need to
// report a failure can catch this; subclasses carry the details.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Distribution weights or a configuration tree failed validation. The
// message is prefixed with the dotted path of the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class DistributionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ManifestError : public Error {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmbeddingError : public Error {
 public:
  using Error::Error;
};

class UnknownIdError : public Error {
 public:
  explicit UnknownIdError(const std::string& id) : Error("unknown id: " + id), id_(id) {}
  const std::string& id() const noexcept { return id_; }

 private:
  std::string id_;
};

class CorpusError : public Error {
 public:
  using Error::Error;
};

class PromptError : public Error {
 public:
  using Error::Error;
};

// Retry budget exhausted on transient failures (429, 5xx, timeouts).
class TransportError : public Error {
 public:
  TransportError(int status, int attempts, const std::string& what)
      : Error(what), status_(status), attempts_(attempts) {}
  int status() const noexcept { return status_; }
  int attempts() const noexcept { return attempts_; }

 private:
  int status_;
  int attempts_;
};

// Non-retryable response, e.g. 400 or 401.
class PermanentError : public Error {
 public:
  PermanentError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string key, const std::string& what) : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class WriteError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmsynth
