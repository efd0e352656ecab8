#include "icon2/errors.hpp"

namespace icon2 {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::MalformedHeader: return "MalformedHeader";
        case ErrorKind::MissingTensor: return "MissingTensor";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NonFiniteWeight: return "NonFiniteWeight";
        case ErrorKind::UnknownTokenId: return "UnknownTokenId";
        case ErrorKind::SequenceTooLong: return "SequenceTooLong";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::ContextOverflow: return "ContextOverflow";
        case ErrorKind::NaNLogits: return "NaNLogits";
        case ErrorKind::DimMismatch: return "DimMismatch";
        case ErrorKind::DegenerateInput: return "DegenerateInput";
        case ErrorKind::NonConvergence: return "NonConvergence";
        case ErrorKind::EmptyFeatureSet: return "EmptyFeatureSet";
        case ErrorKind::RetryBudgetExhausted: return "RetryBudgetExhausted";
        case ErrorKind::EmptyScores: return "EmptyScores";
        case ErrorKind::MissingAssignment: return "MissingAssignment";
        case ErrorKind::MissingDirection: return "MissingDirection";
        case ErrorKind::SinkWriteError: return "SinkWriteError";
        case ErrorKind::ScorerFailure: return "ScorerFailure";
        case ErrorKind::NoFeasibleNegative: return "NoFeasibleNegative";
        case ErrorKind::InsufficientSamples: return "InsufficientSamples";
        case ErrorKind::EmptySample: return "EmptySample";
        case ErrorKind::CriterionMissing: return "CriterionMissing";
        case ErrorKind::MalformedRecord: return "MalformedRecord";
        case ErrorKind::ConfigInvalid: return "ConfigInvalid";
        case ErrorKind::StageFailure: return "StageFailure";
        case ErrorKind::IoError: return "IoError";
    }
    return "UnknownError";
}

}  // namespace icon2
