#pragma once

#include <stdexcept>
#include <string>

namespace cqifb {

/// Invalid configuration, arguments, or out-of-contract inputs.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A required input file does not exist or cannot be opened.
class MissingFileError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A persisted file failed validation (magic, version, truncation).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cqifb
