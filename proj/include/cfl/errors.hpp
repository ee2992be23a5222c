#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfl {

// Shape or layout violations: dimension mismatches, bad indices, invalid specs.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values produced during evaluation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid experiment configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing or unreadable data files (CLI exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed IDX content. Carries the byte offset where parsing failed.
class FormatError : public DataError {
public:
    enum class Kind { bad_magic, truncated, count_mismatch };

    FormatError(Kind kind, std::size_t offset, const std::string& what)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"),
          kind_(kind),
          offset_(offset) {}

    Kind kind() const noexcept { return kind_; }
    std::size_t offset() const noexcept { return offset_; }

private:
    Kind kind_;
    std::size_t offset_;
};

} // namespace cfl
