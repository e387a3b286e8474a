#include "skillflow/process.hpp"

#include <algorithm>
#include <cctype>
#include <deque>
#include <regex>
#include <set>

#include "skillflow/error.hpp"
#include "skillflow/registry.hpp"

namespace skillflow {

const FlowNode* ProcessDefinition::find_node(std::string_view node_id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const auto& n) { return n.id == node_id; });
    return it == nodes.end() ? nullptr : &*it;
}

const SequenceFlow* ProcessDefinition::find_flow(std::string_view flow_id) const {
    auto it = std::find_if(flows.begin(), flows.end(), [&](const auto& f) { return f.id == flow_id; });
    return it == flows.end() ? nullptr : &*it;
}

std::vector<const SequenceFlow*> ProcessDefinition::outgoing(std::string_view node_id) const {
    std::vector<const SequenceFlow*> out;
    for (const auto& f : flows)
        if (f.source == node_id) out.push_back(&f);
    return out;
}

std::vector<const SequenceFlow*> ProcessDefinition::incoming(std::string_view node_id) const {
    std::vector<const SequenceFlow*> out;
    for (const auto& f : flows)
        if (f.target == node_id) out.push_back(&f);
    return out;
}

std::vector<const FlowNode*> ProcessDefinition::boundaries_of(std::string_view task_id) const {
    std::vector<const FlowNode*> out;
    for (const auto& n : nodes)
        if (auto* b = n.as<BoundaryErrorEvent>(); b && b->attached_to == task_id) out.push_back(&n);
    return out;
}

std::map<std::string, std::string> ProcessDefinition::boundary_attachments() const {
    std::map<std::string, std::string> out;
    for (const auto& n : nodes)
        if (auto* b = n.as<BoundaryErrorEvent>()) out.emplace(n.id, b->attached_to);
    return out;
}

const FlowNode* ProcessDefinition::start_event() const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.template is<StartEvent>(); });
    return it == nodes.end() ? nullptr : &*it;
}

std::vector<Diagnostic> structural_diagnostics(const ProcessDefinition& def) {
    std::vector<Diagnostic> out;
    auto report = [&](DiagnosticKind kind, const std::string& element, std::string message) {
        out.push_back({kind, element, std::move(message)});
    };

    std::set<std::string> ids;
    for (const auto& n : def.nodes)
        if (!ids.insert(n.id).second) report(DiagnosticKind::DuplicateId, n.id, "duplicate id");
    for (const auto& f : def.flows)
        if (!ids.insert(f.id).second) report(DiagnosticKind::DuplicateId, f.id, "duplicate id");

    auto starts = std::count_if(def.nodes.begin(), def.nodes.end(), [](const auto& n) { return n.template is<StartEvent>(); });
    if (starts != 1)
        report(DiagnosticKind::StartEventCount, def.id,
               "process needs exactly one start event, found " + std::to_string(starts));
    if (std::none_of(def.nodes.begin(), def.nodes.end(), [](const auto& n) { return n.template is<EndEvent>(); }))
        report(DiagnosticKind::MissingEndEvent, def.id, "process has no end event");

    for (const auto& f : def.flows) {
        const FlowNode* src = def.find_node(f.source);
        const FlowNode* dst = def.find_node(f.target);
        if (!src || !dst) {
            report(DiagnosticKind::DanglingFlow, f.id, "flow references a missing node");
            continue;
        }
        if (dst->is<StartEvent>()) report(DiagnosticKind::IllegalFlow, f.id, "flow into a start event");
        if (dst->is<BoundaryErrorEvent>()) report(DiagnosticKind::IllegalFlow, f.id, "flow into a boundary event");
        if (src->is<EndEvent>()) report(DiagnosticKind::IllegalFlow, f.id, "flow out of an end event");
        if (f.condition && !src->is<ExclusiveGateway>())
            report(DiagnosticKind::MisplacedCondition, f.id, "conditions are only allowed after exclusive gateways");
    }

    for (const auto& n : def.nodes) {
        if (auto* b = n.as<BoundaryErrorEvent>()) {
            const FlowNode* host = def.find_node(b->attached_to);
            if (!host || !host->is_task())
                report(DiagnosticKind::InvalidBoundaryHost, n.id, "boundary event must attach to a task");
        }
        if (auto* g = n.as<ExclusiveGateway>(); g && g->default_flow) {
            const SequenceFlow* f = def.find_flow(*g->default_flow);
            if (!f || f->source != n.id)
                report(DiagnosticKind::InvalidDefaultFlow, n.id, "default flow is not an outgoing flow");
        }
    }

    if (const FlowNode* start = def.start_event()) {
        std::set<std::string> seen{start->id};
        std::deque<std::string> queue{start->id};
        auto attachments = def.boundary_attachments();
        while (!queue.empty()) {
            std::string cur = queue.front();
            queue.pop_front();
            for (const auto* f : def.outgoing(cur))
                if (seen.insert(f->target).second) queue.push_back(f->target);
            for (const auto& [boundary, host] : attachments)
                if (host == cur && seen.insert(boundary).second) queue.push_back(boundary);
        }
        for (const auto& n : def.nodes)
            if (!seen.contains(n.id)) report(DiagnosticKind::Unreachable, n.id, "node is not reachable from the start");
    }
    return out;
}

std::vector<Diagnostic> validate_process(const ProcessDefinition& def, const Registry* registry) {
    std::vector<Diagnostic> out = structural_diagnostics(def);
    auto report = [&](DiagnosticKind kind, const std::string& element, std::string message) {
        out.push_back({kind, element, std::move(message)});
    };

    for (const auto& n : def.nodes) {
        if (n.is<ExclusiveGateway>()) {
            const auto& g = *n.as<ExclusiveGateway>();
            int unconditioned = 0;
            for (const auto* f : def.outgoing(n.id))
                if (!f->condition && (!g.default_flow || *g.default_flow != f->id)) ++unconditioned;
            if (unconditioned >= 2)
                report(DiagnosticKind::AmbiguousGateway, n.id,
                       "exclusive gateway has several unconditioned outgoing flows and no default");
        }
        auto* task = n.as<CapabilityTask>();
        if (!task) continue;
        if (!task->binding) {
            report(DiagnosticKind::MissingBinding, n.id, "service task has no capability binding");
            continue;
        }
        if (!registry) continue;
        const CapabilityBinding& b = *task->binding;
        const Capability* cap = registry->find_capability(b.capability_iri);
        if (!cap) {
            report(DiagnosticKind::UnknownCapability, n.id, "unknown capability " + b.capability_iri);
            continue;
        }
        for (const auto& [prop_iri, value] : b.inputs) {
            const PropertyElement* p = cap->find_input(prop_iri);
            if (!p) {
                report(DiagnosticKind::UnknownProperty, n.id, "capability has no input " + prop_iri);
                continue;
            }
            const Value* constant = value.constant_value();
            if (!constant) continue;
            if (!conforms(*constant, p->datatype)) {
                report(DiagnosticKind::DatatypeMismatch, n.id,
                       "constant for " + prop_iri + " is not " + std::string(to_string(p->datatype)));
                continue;
            }
            if (auto r = check_constraint(*p, *constant); !r.satisfied)
                report(DiagnosticKind::ConstraintViolated, n.id,
                       "constant " + display(*constant) + " for " + prop_iri + " violates " + r.bound);
        }
        for (const auto& [prop_iri, variable] : b.outputs)
            if (!cap->find_output(prop_iri))
                report(DiagnosticKind::UnknownProperty, n.id, "capability has no output " + prop_iri);
    }
    return out;
}

namespace {

bool is_identifier(const std::string& s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}

} // namespace

ProcessDefinition attach_capability(const ProcessDefinition& definition, std::string_view task_id,
                                    CapabilityBinding binding) {
    if (binding.capability_iri.empty())
        throw Error(ErrorCode::InvalidBinding, "binding needs a capability iri", std::string(task_id));
    for (const auto& [prop, value] : binding.inputs)
        if (prop.empty()) throw Error(ErrorCode::InvalidBinding, "input without property iri", std::string(task_id));
    for (const auto& [prop, variable] : binding.outputs) {
        if (prop.empty()) throw Error(ErrorCode::InvalidBinding, "output without property iri", std::string(task_id));
        if (!is_identifier(variable))
            throw Error(ErrorCode::InvalidBinding, "output variable '" + variable + "' is not an identifier",
                        std::string(task_id));
    }
    ProcessDefinition out = definition;
    auto it = std::find_if(out.nodes.begin(), out.nodes.end(), [&](const auto& n) { return n.id == task_id; });
    if (it == out.nodes.end() || !it->is<CapabilityTask>())
        throw Error(ErrorCode::UnknownTask, "no service task with id " + std::string(task_id), std::string(task_id));
    it->as<CapabilityTask>()->binding = std::move(binding);
    return out;
}

std::optional<std::chrono::milliseconds> parse_iso_duration(std::string_view text) {
    static const std::regex pattern(R"(^P(?:(\d+)D)?(?:T(?:(\d+)H)?(?:(\d+)M)?(?:(\d+(?:\.\d+)?)S)?)?$)");
    std::string s(text);
    std::smatch m;
    if (!std::regex_match(s, m, pattern)) return std::nullopt;
    if (!m[1].matched && !m[2].matched && !m[3].matched && !m[4].matched) return std::nullopt;
    if (s.find('T') != std::string::npos && !m[2].matched && !m[3].matched && !m[4].matched) return std::nullopt;
    double ms = 0;
    if (m[1].matched) ms += std::stod(m[1].str()) * 86'400'000.0;
    if (m[2].matched) ms += std::stod(m[2].str()) * 3'600'000.0;
    if (m[3].matched) ms += std::stod(m[3].str()) * 60'000.0;
    if (m[4].matched) ms += std::stod(m[4].str()) * 1000.0;
    return std::chrono::milliseconds(static_cast<std::int64_t>(ms + 0.5));
}

} // namespace skillflow
