#include "skillflow/resolution.hpp"

#include <algorithm>

#include "skillflow/error.hpp"

namespace skillflow {

using nlohmann::json;

std::string_view to_string(SelectionPolicy policy) noexcept {
    switch (policy) {
    case SelectionPolicy::AutoStrict: return "auto-strict";
    case SelectionPolicy::FirstDeterministic: return "first-deterministic";
    case SelectionPolicy::Interactive: return "interactive";
    }
    return "interactive";
}

std::optional<SelectionPolicy> parse_policy(std::string_view text) noexcept {
    if (text == "auto-strict" || text == "AutoStrict" || text == "strict") return SelectionPolicy::AutoStrict;
    if (text == "first-deterministic" || text == "FirstDeterministic" || text == "first")
        return SelectionPolicy::FirstDeterministic;
    if (text == "interactive" || text == "Interactive") return SelectionPolicy::Interactive;
    return std::nullopt;
}

TaskBinding map_parameters(const CapabilityBinding& binding, const Skill& skill) {
    TaskBinding out;
    out.skill_iri = skill.iri;
    for (const auto& [prop, value] : binding.inputs) {
        const SkillVariable* v = skill.parameter_linked_to(prop);
        if (!v)
            throw Error(ErrorCode::UnlinkedProperty,
                        "skill " + skill.iri + " has no parameter linked to property " + prop, prop);
        out.parameters.emplace(v->name, value);
    }
    for (const auto& [prop, variable] : binding.outputs) {
        const SkillVariable* v = skill.result_linked_to(prop);
        if (!v)
            throw Error(ErrorCode::UnlinkedProperty,
                        "skill " + skill.iri + " has no result linked to property " + prop, prop);
        out.outputs.emplace(v->name, variable);
    }
    return out;
}

Resolution resolve(const ProcessDefinition& definition, const Registry& registry, SelectionPolicy policy) {
    PendingDecisions state;
    state.definition_id = definition.id;
    for (const auto& node : definition.nodes) {
        const auto* task = node.as<CapabilityTask>();
        if (!task) continue;
        if (!task->binding) throw Error(ErrorCode::InvalidBinding, "task has no capability binding", node.id);
        const CapabilityBinding& b = *task->binding;
        if (!registry.find_capability(b.capability_iri))
            throw Error(ErrorCode::NoSkillAvailable,
                        "no skill available for " + b.capability_iri + " at task " + node.id, node.id);
        std::vector<Skill> skills = registry.skills_for_capability(b.capability_iri);
        if (skills.empty())
            throw Error(ErrorCode::NoSkillAvailable,
                        "no skill available for " + b.capability_iri + " at task " + node.id, node.id);
        if (skills.size() == 1 || policy == SelectionPolicy::FirstDeterministic) {
            // skills_for_capability is ordered by iri, so front() is the smallest.
            state.decided.emplace(node.id, map_parameters(b, skills.front()));
            continue;
        }
        if (policy == SelectionPolicy::AutoStrict)
            throw Error(ErrorCode::AmbiguousCapability,
                        std::to_string(skills.size()) + " skills provide " + b.capability_iri + " at task " + node.id,
                        node.id);
        PendingDecision d{node.id, b.capability_iri, {}};
        for (const auto& s : skills) d.candidates.push_back({s.iri, map_parameters(b, s)});
        state.pending.push_back(std::move(d));
    }
    if (state.pending.empty()) return BindingPlan{state.definition_id, std::move(state.decided)};
    return state;
}

Resolution decide(const PendingDecisions& pending, std::string_view task_id, std::string_view skill_iri) {
    auto it = std::find_if(pending.pending.begin(), pending.pending.end(),
                           [&](const auto& d) { return d.task_id == task_id; });
    if (it == pending.pending.end())
        throw Error(ErrorCode::UnknownPendingTask, "no pending decision for task " + std::string(task_id),
                    std::string(task_id));
    auto cand = std::find_if(it->candidates.begin(), it->candidates.end(),
                             [&](const auto& c) { return c.skill_iri == skill_iri; });
    if (cand == it->candidates.end())
        throw Error(ErrorCode::NotACandidate,
                    std::string(skill_iri) + " is not a candidate for task " + std::string(task_id),
                    std::string(skill_iri));
    PendingDecisions next = pending;
    next.decided.emplace(std::string(task_id), cand->binding);
    next.pending.erase(next.pending.begin() + (it - pending.pending.begin()));
    if (next.pending.empty()) return BindingPlan{next.definition_id, std::move(next.decided)};
    return next;
}

std::vector<Diagnostic> validate_plan(const BindingPlan& plan, const ProcessDefinition& definition,
                                      const Registry& registry) {
    std::vector<Diagnostic> out;
    auto report = [&](DiagnosticKind kind, const std::string& element, std::string message) {
        out.push_back({kind, element, std::move(message)});
    };
    if (plan.definition_id != definition.id)
        report(DiagnosticKind::PlanMismatch, plan.definition_id, "plan was resolved for another definition");

    for (const auto& node : definition.nodes) {
        const auto* task = node.as<CapabilityTask>();
        if (!task) continue;
        auto it = plan.bindings.find(node.id);
        if (it == plan.bindings.end()) {
            report(DiagnosticKind::PlanMismatch, node.id, "capability task has no binding in the plan");
            continue;
        }
        if (!task->binding) {
            report(DiagnosticKind::MissingBinding, node.id, "service task has no capability binding");
            continue;
        }
        const TaskBinding& tb = it->second;
        const Skill* skill = registry.find_skill(tb.skill_iri);
        if (!skill) {
            report(DiagnosticKind::UnknownSkill, node.id, "skill " + tb.skill_iri + " is not registered");
            continue;
        }
        if (skill->capability_iri != task->binding->capability_iri) {
            report(DiagnosticKind::CapabilityMismatch, node.id,
                   "skill " + skill->iri + " executes " + skill->capability_iri + ", task requires " +
                       task->binding->capability_iri);
            continue;
        }
        const Capability* cap = registry.find_capability(skill->capability_iri);
        for (const auto& [name, value] : tb.parameters) {
            const SkillVariable* v = skill->find_parameter(name);
            if (!v) {
                report(DiagnosticKind::UnknownParameter, node.id, "skill has no parameter '" + name + "'");
                continue;
            }
            const Value* constant = value.constant_value();
            if (!constant) continue;
            if (!conforms(*constant, v->datatype)) {
                report(DiagnosticKind::DatatypeMismatch, node.id,
                       "constant for '" + name + "' is not " + std::string(to_string(v->datatype)));
                continue;
            }
            const PropertyElement* p =
                (cap && v->linked_property) ? cap->find_input(*v->linked_property) : nullptr;
            if (!p) continue;
            if (auto r = check_constraint(*p, *constant); !r.satisfied)
                report(DiagnosticKind::ConstraintViolated, node.id,
                       "constant " + display(*constant) + " for '" + name + "' violates " + r.bound);
        }
        for (const auto& [name, variable] : tb.outputs)
            if (!skill->find_result(name))
                report(DiagnosticKind::UnknownParameter, node.id, "skill has no result '" + name + "'");
    }
    for (const auto& [task_id, binding] : plan.bindings) {
        const FlowNode* n = definition.find_node(task_id);
        if (!n || !n->is<CapabilityTask>())
            report(DiagnosticKind::PlanMismatch, task_id, "plan binds a task that is not a capability task");
    }
    return out;
}

json to_json(const BindingPlan& plan) {
    json bindings = json::object();
    for (const auto& [task, b] : plan.bindings) {
        json params = json::object(), outputs = json::object();
        for (const auto& [name, value] : b.parameters) params[name] = value.source();
        for (const auto& [name, variable] : b.outputs) outputs[name] = variable;
        bindings[task] = {{"skill", b.skill_iri}, {"parameters", params}, {"outputs", outputs}};
    }
    return {{"definitionId", plan.definition_id}, {"bindings", bindings}};
}

BindingPlan plan_from_json(const json& j) {
    try {
        BindingPlan plan;
        plan.definition_id = j.at("definitionId").get<std::string>();
        for (const auto& [task, b] : j.at("bindings").items()) {
            TaskBinding tb;
            tb.skill_iri = b.at("skill").get<std::string>();
            if (b.contains("parameters"))
                for (const auto& [name, value] : b.at("parameters").items())
                    tb.parameters.emplace(name, ValueExpr::parse(value.get<std::string>()));
            if (b.contains("outputs"))
                for (const auto& [name, variable] : b.at("outputs").items())
                    tb.outputs.emplace(name, variable.get<std::string>());
            plan.bindings.emplace(task, std::move(tb));
        }
        return plan;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed plan: ") + e.what());
    }
}

} // namespace skillflow
