#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trilite {

// Base of every error the engine raises. Callers that only need a message
// can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape/dimension disagreement or an invalid setting.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Bad sample content: label out of range, missing annotation, bad index.
class DataError : public Error {
public:
    using Error::Error;
};

// NaN/Inf produced or consumed by a primitive, or a degenerate batch.
class NumericError : public Error {
public:
    using Error::Error;
};

class DeterminismError : public Error {
public:
    using Error::Error;
};

class GenerationError : public Error {
public:
    using Error::Error;
};

// Malformed container file. `offset` is the byte position where reading failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

} // namespace trilite
