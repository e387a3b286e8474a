#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace skillflow {

enum class DiagnosticKind {
    DuplicateId,
    StartEventCount,
    MissingEndEvent,
    DanglingFlow,
    IllegalFlow,
    Unreachable,
    InvalidBoundaryHost,
    InvalidDefaultFlow,
    MisplacedCondition,
    AmbiguousGateway,
    MissingBinding,
    UnknownCapability,
    UnknownProperty,
    DatatypeMismatch,
    ConstraintViolated,
    CapabilityMismatch,
    UnknownSkill,
    UnknownParameter,
    PlanMismatch,
    MissingOutput,
};

std::string_view to_string(DiagnosticKind kind) noexcept;

struct Diagnostic {
    DiagnosticKind kind;
    /// Id of the element the finding is about (node, flow, task, property).
    std::string element;
    std::string message;
};

bool contains(const std::vector<Diagnostic>& diagnostics, DiagnosticKind kind);

} // namespace skillflow
