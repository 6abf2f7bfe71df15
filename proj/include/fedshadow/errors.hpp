#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedshadow {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FieldError {
    std::string field;
    std::string message;
};

/// Invalid dimensions, configuration values or dataset shapes.
class ConfigError : public Error {
public:
    explicit ConfigError(std::string message) : Error(message) {}
    ConfigError(std::string message, std::vector<FieldError> fields)
        : Error(std::move(message)), fields_(std::move(fields)) {}

    const std::vector<FieldError>& fields() const noexcept { return fields_; }

private:
    std::vector<FieldError> fields_;
};

/// A non-finite value showed up during local training.
class NumericDivergence : public Error {
public:
    NumericDivergence(std::size_t epoch, std::size_t batch)
        : Error("numeric divergence at epoch " + std::to_string(epoch) + ", batch " +
                std::to_string(batch)),
          epoch_(epoch), batch_(batch) {}

    std::size_t epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }

private:
    std::size_t epoch_;
    std::size_t batch_;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

class AnalysisError : public Error {
public:
    using Error::Error;
};

class StorageError : public Error {
public:
    using Error::Error;
};

class SequencingError : public StorageError {
public:
    using StorageError::StorageError;
};

class NotFoundError : public StorageError {
public:
    using StorageError::StorageError;
};

/// Malformed persisted document. `line()` is 1-based, 0 when not line-oriented.
class LoadError : public StorageError {
public:
    LoadError(std::string message, std::size_t line)
        : StorageError(std::move(message)), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace fedshadow
