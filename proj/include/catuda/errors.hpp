#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace catuda {

/// Operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Input values outside the admissible domain (non-finite data, etc).
class DomainError : public std::domain_error {
  public:
    using std::domain_error::domain_error;
};

/// A scalar parameter violated its precondition.
class ParameterError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed binary input. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
  public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

  private:
    std::size_t offset_;
};

/// Invalid experiment configuration. `field` is a dotted path such as
/// "train.p"; `line` is 1-based, or 0 when the field was not in the file.
class ConfigError : public std::runtime_error {
  public:
    ConfigError(const std::string& field, std::size_t line, const std::string& what)
        : std::runtime_error(describe(field, line, what)), field_(field), line_(line) {}

    const std::string& field() const noexcept { return field_; }
    std::size_t line() const noexcept { return line_; }

  private:
    static std::string describe(const std::string& field, std::size_t line, const std::string& what) {
        std::string out = line > 0 ? "line " + std::to_string(line) + ": " : std::string();
        if (!field.empty()) out += field + ": ";
        return out + what;
    }

    std::string field_;
    std::size_t line_;
};

/// Training produced a non-finite loss or parameter.
class TrainingAbort : public std::runtime_error {
  public:
    TrainingAbort(const std::string& what, std::size_t iteration)
        : std::runtime_error(what), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

  private:
    std::size_t iteration_;
};

}  // namespace catuda
