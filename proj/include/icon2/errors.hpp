#pragma once

#include <stdexcept>
#include <string>

namespace icon2 {

// Every failure mode the library reports. CLI maps these onto exit codes.
enum class ErrorKind {
    MalformedHeader,
    MissingTensor,
    ShapeMismatch,
    NonFiniteWeight,
    UnknownTokenId,
    SequenceTooLong,
    EmptyInput,
    ContextOverflow,
    NaNLogits,
    DimMismatch,
    DegenerateInput,
    NonConvergence,
    EmptyFeatureSet,
    RetryBudgetExhausted,
    EmptyScores,
    MissingAssignment,
    MissingDirection,
    SinkWriteError,
    ScorerFailure,
    NoFeasibleNegative,
    InsufficientSamples,
    EmptySample,
    CriterionMissing,
    MalformedRecord,
    ConfigInvalid,
    StageFailure,
    IoError,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void raise(ErrorKind kind, const std::string& msg) {
    throw Error(kind, msg);
}

}  // namespace icon2
