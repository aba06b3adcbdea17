#pragma once

#include <stdexcept>
#include <string>

namespace cfsm {

// Caller passed a value outside an operation's domain (bad size, dimension mismatch, ...).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// File could not be read or written. The message always names the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite loss/gradient or a zero-norm vector where a direction is required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid or incomplete configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Corrupt, truncated or incompatible checkpoint archive.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cfsm
