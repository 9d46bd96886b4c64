#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctr {

/// Operand shapes do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A value that must be finite is not (NaN/Inf input or gradient).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A configuration or call parameter is outside its valid domain.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// An API contract was violated (e.g. backward() on a non-scalar).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Malformed file contents. Carries the byte offset at which parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// Config schema violation; `key()` names the offending dotted key path.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& what)
        : std::invalid_argument(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace ctr
