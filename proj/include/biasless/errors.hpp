#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace biasless {

/// Base class for every error raised by the library. `exit_code()` is the
/// process exit status the CLI maps the error to.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 2; }
};

#define BIASLESS_DEFINE_ERROR(Name, Code)                       \
    class Name : public Error {                                 \
    public:                                                     \
        using Error::Error;                                     \
        int exit_code() const noexcept override { return Code; } \
    }

// Search space
BIASLESS_DEFINE_ERROR(SchemaError, 2);
BIASLESS_DEFINE_ERROR(ConstraintError, 2);
BIASLESS_DEFINE_ERROR(SizeError, 2);
BIASLESS_DEFINE_ERROR(LookupError, 2);
// Controller
BIASLESS_DEFINE_ERROR(BatchError, 2);
// Data
BIASLESS_DEFINE_ERROR(PlanError, 2);
// Engine / training
BIASLESS_DEFINE_ERROR(NumericError, 3);
BIASLESS_DEFINE_ERROR(StateError, 3);
BIASLESS_DEFINE_ERROR(CompileError, 2);
BIASLESS_DEFINE_ERROR(WeightingError, 2);
// Evaluation
BIASLESS_DEFINE_ERROR(EvaluationError, 3);
BIASLESS_DEFINE_ERROR(DegenerateMetricError, 3);
// Orchestration
BIASLESS_DEFINE_ERROR(ConfigError, 2);
BIASLESS_DEFINE_ERROR(IoError, 4);

#undef BIASLESS_DEFINE_ERROR

/// Dataset manifest/tensor problems. `row()` is the 1-based manifest line,
/// or 0 when the problem is not tied to a row.
class IngestionError : public Error {
public:
    enum class Kind { NoSamples, Malformed, MissingFile, ShapeMismatch, UnknownGroup, UnknownLabel };

    IngestionError(Kind kind, std::size_t row, const std::string& what)
        : Error(row ? "manifest row " + std::to_string(row) + ": " + what : what), kind_(kind), row_(row) {}

    Kind kind() const noexcept { return kind_; }
    std::size_t row() const noexcept { return row_; }
    int exit_code() const noexcept override { return 4; }

private:
    Kind kind_;
    std::size_t row_;
};

}  // namespace biasless
