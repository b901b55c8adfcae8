#pragma once

#include <stdexcept>
#include <string>

namespace hierflow {

/// Base class for all toolkit errors. `kind()` maps to CLI exit codes.
class Error : public std::runtime_error {
public:
	enum class Kind { config, data, numeric };

	Error(Kind kind, const std::string &msg) : std::runtime_error(msg), kind_(kind) {}

	Kind kind() const { return kind_; }

private:
	Kind kind_;
};

/// Bad flags, malformed or unknown configuration keys.
class ConfigError : public Error {
public:
	explicit ConfigError(const std::string &msg) : Error(Kind::config, msg) {}
};

/// Malformed input files, shape mismatches, missing cells.
class DataError : public Error {
public:
	explicit DataError(const std::string &msg) : Error(Kind::data, msg) {}
};

/// Singular matrices, non-finite intermediates, divergence.
class NumericError : public Error {
public:
	explicit NumericError(const std::string &msg) : Error(Kind::numeric, msg) {}
};

} // namespace hierflow
