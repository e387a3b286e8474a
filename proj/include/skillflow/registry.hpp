#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "skillflow/value.hpp"

namespace skillflow {

struct Constraint {
    std::optional<double> min;
    std::optional<double> max;
    std::vector<std::string> enumeration;

    bool operator==(const Constraint&) const = default;
};

/// IEC 61360-style data element describing one capability input or output.
struct PropertyElement {
    std::string iri;
    std::string name;
    Datatype datatype = Datatype::String;
    std::optional<std::string> unit;
    std::optional<Constraint> constraint;

    bool operator==(const PropertyElement&) const = default;
};

struct Capability {
    std::string iri;
    std::string name;
    std::vector<PropertyElement> inputs;
    std::vector<PropertyElement> outputs;

    const PropertyElement* find_input(std::string_view iri) const;
    const PropertyElement* find_output(std::string_view iri) const;

    bool operator==(const Capability&) const = default;
};

enum class Transport { InProcess, Http };

std::string_view to_string(Transport t) noexcept;

struct SkillInterface {
    Transport transport = Transport::InProcess;
    std::string base_url;
    std::string skill_id;

    bool operator==(const SkillInterface&) const = default;
};

struct SkillVariable {
    std::string name;
    Datatype datatype = Datatype::String;
    std::optional<std::string> linked_property;

    bool operator==(const SkillVariable&) const = default;
};

struct Skill {
    std::string iri;
    std::string name;
    std::string capability_iri;
    std::string machine_iri;
    std::vector<SkillVariable> parameters;
    std::vector<SkillVariable> results;
    SkillInterface interface;

    const SkillVariable* find_parameter(std::string_view name) const;
    const SkillVariable* find_result(std::string_view name) const;
    const SkillVariable* parameter_linked_to(std::string_view property_iri) const;
    const SkillVariable* result_linked_to(std::string_view property_iri) const;

    bool operator==(const Skill&) const = default;
};

struct Machine {
    std::string iri;
    std::string name;
    std::vector<std::string> skill_iris;

    bool operator==(const Machine&) const = default;
};

/// A machine together with the skills it hosts, as registered or removed in
/// one step.
struct MachineDefinition {
    std::string iri;
    std::string name;
    std::vector<Skill> skills;

    bool operator==(const MachineDefinition&) const = default;
};

struct ConstraintResult {
    bool satisfied = true;
    /// The failed bound, e.g. "max=4" or "enum".
    std::string bound;

    static ConstraintResult ok() { return {}; }
    static ConstraintResult violated(std::string bound) { return {false, std::move(bound)}; }
};

/// Throws DatatypeMismatch when `value` cannot be stored in the property.
ConstraintResult check_constraint(const PropertyElement& property, const Value& value);

/// Typed store of capabilities, machines and skills. Every mutation is
/// validated in full before it is applied, so a failed call leaves the
/// registry unchanged. Query results are ordered lexicographically by iri.
class Registry {
public:
    void add_capability(Capability capability);
    void register_machine(MachineDefinition machine);
    void unregister_machine(std::string_view machine_iri);

    std::vector<Skill> skills_for_capability(std::string_view capability_iri) const;

    const Capability* find_capability(std::string_view iri) const;
    const Machine* find_machine(std::string_view iri) const;
    const Skill* find_skill(std::string_view iri) const;
    std::optional<MachineDefinition> machine_definition(std::string_view iri) const;

    const std::map<std::string, Capability, std::less<>>& capabilities() const noexcept { return capabilities_; }
    const std::map<std::string, Machine, std::less<>>& machines() const noexcept { return machines_; }
    const std::map<std::string, Skill, std::less<>>& skills() const noexcept { return skills_; }

    bool operator==(const Registry&) const = default;

private:
    bool iri_taken(std::string_view iri) const;
    void validate_skill(const Skill& skill) const;

    std::map<std::string, Capability, std::less<>> capabilities_;
    std::map<std::string, Machine, std::less<>> machines_;
    std::map<std::string, Skill, std::less<>> skills_;
};

/// Parses and validates a registry document. Throws ParseError for malformed
/// input and ValidationError / DuplicateIri for violated invariants.
Registry load_registry(std::string_view document);

Capability capability_from_json(const nlohmann::json& j);
MachineDefinition machine_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PropertyElement& property);
nlohmann::json to_json(const Capability& capability);
nlohmann::json to_json(const Skill& skill);
nlohmann::json to_json(const MachineDefinition& machine);
nlohmann::json to_json(const Registry& registry);

} // namespace skillflow
