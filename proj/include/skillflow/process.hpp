#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "skillflow/diagnostic.hpp"
#include "skillflow/expr.hpp"
#include "skillflow/value.hpp"

namespace skillflow {

class Registry;

inline constexpr std::string_view kBpmnNamespace = "http://www.omg.org/spec/BPMN/20100524/MODEL";
inline constexpr std::string_view kCapabilityNamespace = "urn:skillflow:capability";

/// Capability reference stored inside a service task: which capability, the
/// value of each input property and the process variable receiving each output.
struct CapabilityBinding {
    std::string capability_iri;
    std::map<std::string, ValueExpr> inputs;    // property iri -> value
    std::map<std::string, std::string> outputs; // property iri -> process variable

    bool operator==(const CapabilityBinding&) const = default;
};

struct FormField {
    std::string name;
    Datatype datatype = Datatype::String;

    bool operator==(const FormField&) const = default;
};

struct StartEvent {
    bool operator==(const StartEvent&) const = default;
};
struct EndEvent {
    bool operator==(const EndEvent&) const = default;
};
struct ExclusiveGateway {
    std::optional<std::string> default_flow;
    bool operator==(const ExclusiveGateway&) const = default;
};
struct ParallelGateway {
    bool operator==(const ParallelGateway&) const = default;
};
struct UserTask {
    std::vector<FormField> fields;
    bool operator==(const UserTask&) const = default;
};
struct SendTask {
    std::string subject;
    std::string body;
    bool operator==(const SendTask&) const = default;
};
/// A service task. Without a binding it is a placeholder awaiting
/// attach_capability and fails validation.
struct CapabilityTask {
    std::optional<CapabilityBinding> binding;
    bool operator==(const CapabilityTask&) const = default;
};
struct TimerCatchEvent {
    std::string duration_text;
    std::chrono::milliseconds duration{0};
    bool operator==(const TimerCatchEvent&) const = default;
};
/// Interrupting error catch attached to a task. No filter catches every code.
struct BoundaryErrorEvent {
    std::string attached_to;
    std::optional<std::string> error_code;
    bool operator==(const BoundaryErrorEvent&) const = default;
};

using NodeSpec = std::variant<StartEvent, EndEvent, ExclusiveGateway, ParallelGateway, UserTask, SendTask,
                              CapabilityTask, TimerCatchEvent, BoundaryErrorEvent>;

struct FlowNode {
    std::string id;
    std::string name;
    NodeSpec spec;

    template <typename T>
    bool is() const noexcept { return std::holds_alternative<T>(spec); }
    template <typename T>
    const T* as() const noexcept { return std::get_if<T>(&spec); }
    template <typename T>
    T* as() noexcept { return std::get_if<T>(&spec); }

    bool is_task() const noexcept { return is<UserTask>() || is<SendTask>() || is<CapabilityTask>(); }

    bool operator==(const FlowNode&) const = default;
};

struct SequenceFlow {
    std::string id;
    std::string source;
    std::string target;
    std::optional<ValueExpr> condition;
    std::string name;

    bool operator==(const SequenceFlow&) const = default;
};

/// BPMN-subset process graph. Node and flow vectors keep document order,
/// which is also the evaluation order of exclusive gateway conditions.
struct ProcessDefinition {
    std::string id;
    std::string name;
    std::vector<FlowNode> nodes;
    std::vector<SequenceFlow> flows;
    /// Diagram interchange block kept verbatim, with the namespace
    /// declarations it needs.
    std::string diagram;
    std::vector<std::pair<std::string, std::string>> diagram_namespaces;

    const FlowNode* find_node(std::string_view node_id) const;
    const SequenceFlow* find_flow(std::string_view flow_id) const;
    std::vector<const SequenceFlow*> outgoing(std::string_view node_id) const;
    std::vector<const SequenceFlow*> incoming(std::string_view node_id) const;
    /// Boundary events attached to `task_id`, in document order.
    std::vector<const FlowNode*> boundaries_of(std::string_view task_id) const;
    std::map<std::string, std::string> boundary_attachments() const;
    const FlowNode* start_event() const;

    bool operator==(const ProcessDefinition&) const = default;
};

/// Throws XmlError, UnsupportedElement or StructureError.
ProcessDefinition parse_process(std::string_view xml);

/// Deterministic output; parse_process(serialize_process(d)) == d.
std::string serialize_process(const ProcessDefinition& definition);

/// Structural checks, plus capability/property/constraint checks when a
/// registry is supplied. Empty result means the definition is executable.
std::vector<Diagnostic> validate_process(const ProcessDefinition& definition, const Registry* registry = nullptr);

/// Structural subset of validate_process (what parse_process enforces).
std::vector<Diagnostic> structural_diagnostics(const ProcessDefinition& definition);

/// Returns a copy with `binding` on the service task `task_id`, replacing any
/// previous binding. Throws UnknownTask or InvalidBinding.
ProcessDefinition attach_capability(const ProcessDefinition& definition, std::string_view task_id,
                                    CapabilityBinding binding);

/// ISO-8601 duration (PnDTnHnMnS, fractional seconds allowed).
std::optional<std::chrono::milliseconds> parse_iso_duration(std::string_view text);

} // namespace skillflow
