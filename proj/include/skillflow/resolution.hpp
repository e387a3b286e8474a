#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "skillflow/diagnostic.hpp"
#include "skillflow/process.hpp"
#include "skillflow/registry.hpp"

namespace skillflow {

/// How one capability task is executed: the chosen skill, the value feeding
/// each skill parameter and the process variable receiving each result.
struct TaskBinding {
    std::string skill_iri;
    std::map<std::string, ValueExpr> parameters; // skill parameter -> value
    std::map<std::string, std::string> outputs;  // skill result -> process variable

    bool operator==(const TaskBinding&) const = default;
};

/// The skill process: a capability process with every capability task bound.
struct BindingPlan {
    std::string definition_id;
    std::map<std::string, TaskBinding> bindings; // task id -> binding

    bool operator==(const BindingPlan&) const = default;
};

struct Candidate {
    std::string skill_iri;
    TaskBinding binding;

    bool operator==(const Candidate&) const = default;
};

struct PendingDecision {
    std::string task_id;
    std::string capability_iri;
    std::vector<Candidate> candidates;

    bool operator==(const PendingDecision&) const = default;
};

/// Resolution that still needs a user to pick skills for some tasks. Each
/// candidate carries its precomputed binding, so decide() needs no registry.
struct PendingDecisions {
    std::string definition_id;
    std::vector<PendingDecision> pending;
    std::map<std::string, TaskBinding> decided;

    bool operator==(const PendingDecisions&) const = default;
};

enum class SelectionPolicy { AutoStrict, FirstDeterministic, Interactive };

std::string_view to_string(SelectionPolicy policy) noexcept;
std::optional<SelectionPolicy> parse_policy(std::string_view text) noexcept;

using Resolution = std::variant<BindingPlan, PendingDecisions>;

/// Binds every capability task of `definition` to a registered skill.
/// Throws NoSkillAvailable, AmbiguousCapability (AutoStrict), UnlinkedProperty.
Resolution resolve(const ProcessDefinition& definition, const Registry& registry, SelectionPolicy policy);

/// Throws UnknownPendingTask, NotACandidate.
Resolution decide(const PendingDecisions& pending, std::string_view task_id, std::string_view skill_iri);

/// Maps capability property assignments onto the skill variables linked to
/// them. Throws UnlinkedProperty.
TaskBinding map_parameters(const CapabilityBinding& binding, const Skill& skill);

std::vector<Diagnostic> validate_plan(const BindingPlan& plan, const ProcessDefinition& definition,
                                      const Registry& registry);

nlohmann::json to_json(const BindingPlan& plan);
BindingPlan plan_from_json(const nlohmann::json& j);

} // namespace skillflow
