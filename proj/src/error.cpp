#include "skillflow/error.hpp"

namespace skillflow {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::DuplicateIri: return "DuplicateIri";
    case ErrorCode::UnknownIri: return "UnknownIri";
    case ErrorCode::DatatypeMismatch: return "DatatypeMismatch";
    case ErrorCode::XmlError: return "XmlError";
    case ErrorCode::UnsupportedElement: return "UnsupportedElement";
    case ErrorCode::StructureError: return "StructureError";
    case ErrorCode::ExprParseError: return "ExprParseError";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::TypeError: return "TypeError";
    case ErrorCode::DivisionByZero: return "DivisionByZero";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::UnknownTask: return "UnknownTask";
    case ErrorCode::InvalidBinding: return "InvalidBinding";
    case ErrorCode::IllegalTransition: return "IllegalTransition";
    case ErrorCode::NotActing: return "NotActing";
    case ErrorCode::PortUnavailable: return "PortUnavailable";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::WrongState: return "WrongState";
    case ErrorCode::UnknownParameter: return "UnknownParameter";
    case ErrorCode::UnknownSkill: return "UnknownSkill";
    case ErrorCode::NoSkillAvailable: return "NoSkillAvailable";
    case ErrorCode::AmbiguousCapability: return "AmbiguousCapability";
    case ErrorCode::UnknownPendingTask: return "UnknownPendingTask";
    case ErrorCode::NotACandidate: return "NotACandidate";
    case ErrorCode::UnlinkedProperty: return "UnlinkedProperty";
    case ErrorCode::PlanMismatch: return "PlanMismatch";
    case ErrorCode::PlanIncomplete: return "PlanIncomplete";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::NoOpenWorkItem: return "NoOpenWorkItem";
    case ErrorCode::MissingField: return "MissingField";
    case ErrorCode::UnknownInstance: return "UnknownInstance";
    case ErrorCode::AlreadyEnded: return "AlreadyEnded";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::StorageError: return "StorageError";
    }
    return "Unknown";
}

std::optional<ErrorCode> parse_error_code(std::string_view text) noexcept {
    for (int i = 0; i <= static_cast<int>(ErrorCode::StorageError); ++i)
        if (to_string(static_cast<ErrorCode>(i)) == text) return static_cast<ErrorCode>(i);
    return std::nullopt;
}

Error::Error(ErrorCode code, const std::string& message, std::string subject)
    : std::runtime_error(message), code_(code), subject_(std::move(subject)) {}

ExprParseError::ExprParseError(std::size_t position, std::string expected)
    : Error(ErrorCode::ExprParseError,
            "expected " + expected + " at position " + std::to_string(position)),
      position_(position), expected_(std::move(expected)) {}

} // namespace skillflow
