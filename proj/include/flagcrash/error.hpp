#pragma once

#include <stdexcept>
#include <string>

namespace flagcrash {

// Base of every error the library throws. The CLI maps the subclasses to
// distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input text (CSV, config, archive bytes).
class ParseError : public Error {
public:
    using Error::Error;
};

// Well-formed input whose content violates a precondition.
class DataError : public Error {
public:
    using Error::Error;
};

// Invalid parameters or configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Shape mismatch inside the autodiff core.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A pipeline stage failed; carries the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace flagcrash
