#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctxhsd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file is missing a required column.
class SchemaError : public Error {
 public:
  SchemaError(const std::string& column, const std::string& where)
      : Error("missing column '" + column + "' in " + where), column_(column) {}
  const std::string& column() const { return column_; }

 private:
  std::string column_;
};

class ValueError : public Error {
 public:
  explicit ValueError(const std::string& what, std::ptrdiff_t row = -1)
      : Error(row >= 0 ? what + " (row " + std::to_string(row) + ")" : what), row_(row) {}
  std::ptrdiff_t row() const { return row_; }

 private:
  std::ptrdiff_t row_;
};

// Referential problems across files, e.g. annotation rows without images.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::string& what, std::vector<std::string> ids)
      : Error(what), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const { return ids_; }

 private:
  std::vector<std::string> ids_;
};

// Shape or dimensionality contract violated by a caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Failure raised by an external backend (LLM, NER, linker).
class BackendError : public Error {
 public:
  BackendError(const std::string& what, bool retriable) : Error(what), retriable_(retriable) {}
  bool retriable() const { return retriable_; }

 private:
  bool retriable_;
};

class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, std::string cache_key)
      : Error(what + " [cache_key=" + cache_key + "]"), cache_key_(std::move(cache_key)) {}
  const std::string& cache_key() const { return cache_key_; }

 private:
  std::string cache_key_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string raw)
      : Error(what + ": '" + raw + "'"), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t epoch)
      : Error("non-finite loss at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// A pipeline stage needs an artifact that an earlier command produces.
class UpstreamMissing : public Error {
 public:
  UpstreamMissing(const std::string& what, std::string producer)
      : Error(what + " (run '" + producer + "' first)"), producer_(std::move(producer)) {}
  const std::string& producer() const { return producer_; }

 private:
  std::string producer_;
};

}  // namespace ctxhsd
