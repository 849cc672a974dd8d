#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cascfluor {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation (e.g. negative saturation).
class DomainError : public Error {
  public:
    using Error::Error;
};

/// Malformed or inconsistent caller input (length mismatches, bad bin sizes).
class InputError : public Error {
  public:
    using Error::Error;
};

/// Invalid configuration values.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// A spectrum whose total weight cannot be normalized, or was used unnormalized.
class NormalizationError : public Error {
  public:
    using Error::Error;
};

/// The fit problem is underdetermined or its normal matrix is singular.
class DegenerateFitError : public Error {
  public:
    using Error::Error;
};

/// Text input that does not parse; carries the 1-based line number.
class ParseError : public Error {
  public:
    ParseError(const std::string& what, std::size_t line)
        : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

} // namespace cascfluor
