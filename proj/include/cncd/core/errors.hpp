#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cncd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// An input is geometrically degenerate (zero norm, duplicate points).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A hyperparameter or spec value lies outside its valid range.
class ParameterError : public Error {
public:
    using Error::Error;
};

/// The caller violated an API precondition (shape mismatch, wrong node kind).
class UsageError : public Error {
public:
    using Error::Error;
};

/// Data content is inconsistent (label out of range, missing field).
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(path + ": " + what), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// Malformed document; `byte_offset` points at the first offending byte.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t byte_offset)
        : Error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset_(byte_offset) {}
    std::size_t byte_offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::size_t epoch)
        : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    std::size_t epoch() const noexcept { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace cncd
