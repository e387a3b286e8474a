#include "skillflow/diagnostic.hpp"

#include <algorithm>

namespace skillflow {

std::string_view to_string(DiagnosticKind kind) noexcept {
    switch (kind) {
    case DiagnosticKind::DuplicateId: return "DuplicateId";
    case DiagnosticKind::StartEventCount: return "StartEventCount";
    case DiagnosticKind::MissingEndEvent: return "MissingEndEvent";
    case DiagnosticKind::DanglingFlow: return "DanglingFlow";
    case DiagnosticKind::IllegalFlow: return "IllegalFlow";
    case DiagnosticKind::Unreachable: return "Unreachable";
    case DiagnosticKind::InvalidBoundaryHost: return "InvalidBoundaryHost";
    case DiagnosticKind::InvalidDefaultFlow: return "InvalidDefaultFlow";
    case DiagnosticKind::MisplacedCondition: return "MisplacedCondition";
    case DiagnosticKind::AmbiguousGateway: return "AmbiguousGateway";
    case DiagnosticKind::MissingBinding: return "MissingBinding";
    case DiagnosticKind::UnknownCapability: return "UnknownCapability";
    case DiagnosticKind::UnknownProperty: return "UnknownProperty";
    case DiagnosticKind::DatatypeMismatch: return "DatatypeMismatch";
    case DiagnosticKind::ConstraintViolated: return "ConstraintViolated";
    case DiagnosticKind::CapabilityMismatch: return "CapabilityMismatch";
    case DiagnosticKind::UnknownSkill: return "UnknownSkill";
    case DiagnosticKind::UnknownParameter: return "UnknownParameter";
    case DiagnosticKind::PlanMismatch: return "PlanMismatch";
    case DiagnosticKind::MissingOutput: return "MissingOutput";
    }
    return "Unknown";
}

bool contains(const std::vector<Diagnostic>& diagnostics, DiagnosticKind kind) {
    return std::any_of(diagnostics.begin(), diagnostics.end(), [&](const auto& d) { return d.kind == kind; });
}

} // namespace skillflow
