#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace graftbench {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller violated an operation's preconditions.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Mismatched shapes, incompatible vocabularies, bad special tokens.
class ConfigurationError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed input file. Carries a 1-based line number (0 = unknown) and,
/// for encoding problems, a byte offset (-1 = unknown).
class ParseError : public Error {
public:
    ParseError(const std::string& msg, std::size_t line = 0,
               long long byte_offset = -1)
        : Error(msg), line_(line), byte_offset_(byte_offset) {}

    std::size_t line() const { return line_; }
    long long byte_offset() const { return byte_offset_; }

private:
    std::size_t line_;
    long long byte_offset_;
};

/// Semantically invalid data (e.g. an unknown class label).
class DataError : public Error {
public:
    using Error::Error;
};

/// A numeric routine failed to converge or produced non-finite values.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Experiment-config validation failure. Collects every violation found,
/// each prefixed by a JSON pointer into the config document.
class ValidationError : public Error {
public:
    explicit ValidationError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "config validation failed:";
        for (const auto& e : v) {
            s += "\n  ";
            s += e;
        }
        return s;
    }

    std::vector<std::string> violations_;
};

}  // namespace graftbench
