#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace skillflow {

enum class ErrorCode {
    ParseError,
    ValidationError,
    DuplicateIri,
    UnknownIri,
    DatatypeMismatch,
    XmlError,
    UnsupportedElement,
    StructureError,
    ExprParseError,
    UnknownVariable,
    TypeError,
    DivisionByZero,
    Overflow,
    UnknownTask,
    InvalidBinding,
    IllegalTransition,
    NotActing,
    PortUnavailable,
    ConfigError,
    WrongState,
    UnknownParameter,
    UnknownSkill,
    NoSkillAvailable,
    AmbiguousCapability,
    UnknownPendingTask,
    NotACandidate,
    UnlinkedProperty,
    PlanMismatch,
    PlanIncomplete,
    ValidationFailed,
    NoOpenWorkItem,
    MissingField,
    UnknownInstance,
    AlreadyEnded,
    NotFound,
    TransportError,
    StorageError,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> parse_error_code(std::string_view text) noexcept;

/// Every failure surfaced by the library carries a stable code; `subject`
/// names the offending identifier (iri, task id, variable) when there is one.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string subject = {});

    ErrorCode code() const noexcept { return code_; }
    const std::string& subject() const noexcept { return subject_; }

private:
    ErrorCode code_;
    std::string subject_;
};

class ExprParseError : public Error {
public:
    ExprParseError(std::size_t position, std::string expected);

    std::size_t position() const noexcept { return position_; }
    const std::string& expected() const noexcept { return expected_; }

private:
    std::size_t position_;
    std::string expected_;
};

} // namespace skillflow
