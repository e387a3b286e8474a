#include "skillflow/registry.hpp"

#include <algorithm>
#include <charconv>
#include <regex>
#include <set>

#include "skillflow/error.hpp"

namespace skillflow {

using nlohmann::json;

namespace {

const PropertyElement* find_property(const std::vector<PropertyElement>& props, std::string_view iri) {
    auto it = std::find_if(props.begin(), props.end(), [&](const auto& p) { return p.iri == iri; });
    return it == props.end() ? nullptr : &*it;
}

const SkillVariable* find_variable(const std::vector<SkillVariable>& vars, std::string_view name) {
    auto it = std::find_if(vars.begin(), vars.end(), [&](const auto& v) { return v.name == name; });
    return it == vars.end() ? nullptr : &*it;
}

const SkillVariable* find_linked(const std::vector<SkillVariable>& vars, std::string_view iri) {
    auto it = std::find_if(vars.begin(), vars.end(),
                           [&](const auto& v) { return v.linked_property && *v.linked_property == iri; });
    return it == vars.end() ? nullptr : &*it;
}

std::string format_bound(double d) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
    return std::string(buf, end);
}

[[noreturn]] void invalid(const std::string& message, const std::string& iri) {
    throw Error(ErrorCode::ValidationError, message + ": " + iri, iri);
}

void validate_property(const PropertyElement& p, const std::string& owner) {
    if (p.iri.empty()) invalid("property without iri in capability", owner);
    if (!p.constraint) return;
    const Constraint& c = *p.constraint;
    bool numeric = p.datatype == Datatype::Integer || p.datatype == Datatype::Real;
    if ((c.min || c.max) && !numeric) invalid("min/max constraint on non-numeric property", p.iri);
    if (c.min && c.max && *c.min > *c.max) invalid("constraint min exceeds max", p.iri);
    if (!c.enumeration.empty() && p.datatype != Datatype::String)
        invalid("enumeration constraint on non-string property", p.iri);
}

bool valid_absolute_url(const std::string& url) {
    static const std::regex pattern(R"(^https?://[A-Za-z0-9._\-\[\]]+(:[0-9]{1,5})?(/[^\s]*)?$)");
    return std::regex_match(url, pattern);
}

// JSON field access with ParseError on malformed shape.

const json& field(const json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorCode::ParseError, std::string("missing field '") + key + "'");
    return j.at(key);
}

std::string string_field(const json& j, const char* key) {
    const json& v = field(j, key);
    if (!v.is_string()) throw Error(ErrorCode::ParseError, std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return string_field(j, key);
}

const json& array_field(const json& j, const char* key, bool required = true) {
    static const json empty = json::array();
    if (!required && !j.contains(key)) return empty;
    const json& v = field(j, key);
    if (!v.is_array()) throw Error(ErrorCode::ParseError, std::string("field '") + key + "' must be an array");
    return v;
}

Datatype datatype_field(const json& j) {
    std::string text = string_field(j, "datatype");
    auto dt = parse_datatype(text);
    if (!dt) throw Error(ErrorCode::ParseError, "unknown datatype '" + text + "'");
    return *dt;
}

PropertyElement property_from_json(const json& j) {
    PropertyElement p;
    p.iri = string_field(j, "iri");
    p.name = j.contains("name") ? string_field(j, "name") : p.iri;
    p.datatype = datatype_field(j);
    p.unit = optional_string(j, "unit");
    if (j.contains("constraint") && !j.at("constraint").is_null()) {
        const json& c = j.at("constraint");
        if (!c.is_object()) throw Error(ErrorCode::ParseError, "constraint must be an object");
        Constraint out;
        auto number = [&](const char* key) -> std::optional<double> {
            if (!c.contains(key)) return std::nullopt;
            if (!c.at(key).is_number()) throw Error(ErrorCode::ParseError, std::string(key) + " must be a number");
            return c.at(key).get<double>();
        };
        out.min = number("min");
        out.max = number("max");
        if (c.contains("enum")) {
            const json& e = c.at("enum");
            if (!e.is_array()) throw Error(ErrorCode::ParseError, "enum must be an array");
            if (e.empty()) invalid("empty enumeration constraint", p.iri);
            for (const auto& item : e) {
                if (!item.is_string()) throw Error(ErrorCode::ParseError, "enum entries must be strings");
                out.enumeration.push_back(item.get<std::string>());
            }
        }
        p.constraint = std::move(out);
    }
    return p;
}

SkillVariable variable_from_json(const json& j) {
    SkillVariable v;
    v.name = string_field(j, "name");
    v.datatype = datatype_field(j);
    v.linked_property = optional_string(j, "linkedProperty");
    return v;
}

Skill skill_from_json(const json& j, const std::string& machine_iri) {
    Skill s;
    s.iri = string_field(j, "iri");
    s.name = j.contains("name") ? string_field(j, "name") : s.iri;
    s.capability_iri = string_field(j, "capability");
    s.machine_iri = machine_iri;
    for (const auto& v : array_field(j, "parameters", false)) s.parameters.push_back(variable_from_json(v));
    for (const auto& v : array_field(j, "results", false)) s.results.push_back(variable_from_json(v));
    const json& iface = field(j, "interface");
    std::string transport = string_field(iface, "transport");
    if (transport == "in-process") s.interface.transport = Transport::InProcess;
    else if (transport == "http") s.interface.transport = Transport::Http;
    else throw Error(ErrorCode::ParseError, "unknown transport '" + transport + "'");
    s.interface.base_url = optional_string(iface, "baseUrl").value_or("");
    s.interface.skill_id = string_field(iface, "skillId");
    return s;
}

json variable_to_json(const SkillVariable& v) {
    json j{{"name", v.name}, {"datatype", to_string(v.datatype)}};
    if (v.linked_property) j["linkedProperty"] = *v.linked_property;
    return j;
}

} // namespace

std::string_view to_string(Transport t) noexcept { return t == Transport::Http ? "http" : "in-process"; }

const PropertyElement* Capability::find_input(std::string_view iri) const { return find_property(inputs, iri); }
const PropertyElement* Capability::find_output(std::string_view iri) const { return find_property(outputs, iri); }

const SkillVariable* Skill::find_parameter(std::string_view n) const { return find_variable(parameters, n); }
const SkillVariable* Skill::find_result(std::string_view n) const { return find_variable(results, n); }
const SkillVariable* Skill::parameter_linked_to(std::string_view iri) const { return find_linked(parameters, iri); }
const SkillVariable* Skill::result_linked_to(std::string_view iri) const { return find_linked(results, iri); }

ConstraintResult check_constraint(const PropertyElement& property, const Value& value) {
    if (!conforms(value, property.datatype))
        throw Error(ErrorCode::DatatypeMismatch,
                    "property " + property.iri + " expects " + std::string(to_string(property.datatype)) +
                        ", got " + std::string(to_string(value.type())),
                    property.iri);
    if (!property.constraint) return ConstraintResult::ok();
    const Constraint& c = *property.constraint;
    if (value.is_numeric()) {
        double v = value.as_real();
        if (c.min && v < *c.min) return ConstraintResult::violated("min=" + format_bound(*c.min));
        if (c.max && v > *c.max) return ConstraintResult::violated("max=" + format_bound(*c.max));
    }
    if (!c.enumeration.empty() && value.type() == Datatype::String &&
        std::find(c.enumeration.begin(), c.enumeration.end(), value.as_string()) == c.enumeration.end())
        return ConstraintResult::violated("enum");
    return ConstraintResult::ok();
}

bool Registry::iri_taken(std::string_view iri) const {
    return capabilities_.contains(iri) || machines_.contains(iri) || skills_.contains(iri);
}

void Registry::add_capability(Capability capability) {
    if (capability.iri.empty()) invalid("capability without iri", "");
    if (iri_taken(capability.iri))
        throw Error(ErrorCode::DuplicateIri, "duplicate iri: " + capability.iri, capability.iri);
    std::set<std::string> seen;
    for (const auto* list : {&capability.inputs, &capability.outputs}) {
        for (const auto& p : *list) {
            validate_property(p, capability.iri);
            if (!seen.insert(p.iri).second) invalid("duplicate property iri", p.iri);
        }
    }
    std::string key = capability.iri;
    capabilities_.emplace(std::move(key), std::move(capability));
}

void Registry::validate_skill(const Skill& skill) const {
    const Capability* cap = find_capability(skill.capability_iri);
    if (!cap) invalid("skill " + skill.iri + " references unknown capability", skill.capability_iri);
    std::set<std::string> names;
    auto check_vars = [&](const std::vector<SkillVariable>& vars, bool is_parameter) {
        for (const auto& v : vars) {
            if (v.name.empty()) invalid("unnamed skill variable", skill.iri);
            if (!names.insert(v.name).second) invalid("duplicate variable name '" + v.name + "' in skill", skill.iri);
            if (!v.linked_property) continue;
            const PropertyElement* p =
                is_parameter ? cap->find_input(*v.linked_property) : cap->find_output(*v.linked_property);
            if (!p) invalid("variable '" + v.name + "' links unknown property", *v.linked_property);
            if (p->datatype != v.datatype)
                invalid("variable '" + v.name + "' datatype differs from linked property", *v.linked_property);
        }
    };
    check_vars(skill.parameters, true);
    check_vars(skill.results, false);
    if (skill.interface.skill_id.empty()) invalid("skill interface without skillId", skill.iri);
    if (skill.interface.transport == Transport::Http && !valid_absolute_url(skill.interface.base_url))
        invalid("http skill interface needs an absolute URL", skill.iri);
}

void Registry::register_machine(MachineDefinition machine) {
    if (machine.iri.empty()) invalid("machine without iri", "");
    if (iri_taken(machine.iri)) throw Error(ErrorCode::DuplicateIri, "duplicate iri: " + machine.iri, machine.iri);
    std::set<std::string> fragment_iris{machine.iri};
    for (auto& skill : machine.skills) {
        if (skill.iri.empty()) invalid("skill without iri on machine", machine.iri);
        if (iri_taken(skill.iri) || !fragment_iris.insert(skill.iri).second)
            throw Error(ErrorCode::DuplicateIri, "duplicate iri: " + skill.iri, skill.iri);
        if (!skill.machine_iri.empty() && skill.machine_iri != machine.iri)
            invalid("skill declares a different owning machine", skill.iri);
        skill.machine_iri = machine.iri;
        validate_skill(skill);
    }
    Machine m{machine.iri, machine.name, {}};
    for (auto& skill : machine.skills) {
        m.skill_iris.push_back(skill.iri);
        std::string key = skill.iri;
        skills_.emplace(std::move(key), std::move(skill));
    }
    machines_.emplace(m.iri, std::move(m));
}

void Registry::unregister_machine(std::string_view machine_iri) {
    auto it = machines_.find(machine_iri);
    if (it == machines_.end())
        throw Error(ErrorCode::UnknownIri, "unknown machine: " + std::string(machine_iri), std::string(machine_iri));
    for (const auto& s : it->second.skill_iris) skills_.erase(s);
    machines_.erase(it);
}

std::vector<Skill> Registry::skills_for_capability(std::string_view capability_iri) const {
    if (!capabilities_.contains(capability_iri))
        throw Error(ErrorCode::UnknownIri, "unknown capability: " + std::string(capability_iri),
                    std::string(capability_iri));
    std::vector<Skill> out;
    for (const auto& [iri, skill] : skills_)
        if (skill.capability_iri == capability_iri) out.push_back(skill);
    return out;
}

const Capability* Registry::find_capability(std::string_view iri) const {
    auto it = capabilities_.find(iri);
    return it == capabilities_.end() ? nullptr : &it->second;
}

const Machine* Registry::find_machine(std::string_view iri) const {
    auto it = machines_.find(iri);
    return it == machines_.end() ? nullptr : &it->second;
}

const Skill* Registry::find_skill(std::string_view iri) const {
    auto it = skills_.find(iri);
    return it == skills_.end() ? nullptr : &it->second;
}

std::optional<MachineDefinition> Registry::machine_definition(std::string_view iri) const {
    const Machine* m = find_machine(iri);
    if (!m) return std::nullopt;
    MachineDefinition out{m->iri, m->name, {}};
    for (const auto& s : m->skill_iris) out.skills.push_back(skills_.at(s));
    return out;
}

Capability capability_from_json(const json& j) {
    Capability c;
    c.iri = string_field(j, "iri");
    c.name = j.contains("name") ? string_field(j, "name") : c.iri;
    for (const auto& p : array_field(j, "inputs", false)) c.inputs.push_back(property_from_json(p));
    for (const auto& p : array_field(j, "outputs", false)) c.outputs.push_back(property_from_json(p));
    return c;
}

MachineDefinition machine_from_json(const json& j) {
    MachineDefinition m;
    m.iri = string_field(j, "iri");
    m.name = j.contains("name") ? string_field(j, "name") : m.iri;
    for (const auto& s : array_field(j, "skills", false)) m.skills.push_back(skill_from_json(s, m.iri));
    return m;
}

Registry load_registry(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed registry document: ") + e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::ParseError, "registry document must be a JSON object");
    Registry registry;
    try {
        for (const auto& c : array_field(doc, "capabilities")) registry.add_capability(capability_from_json(c));
        for (const auto& m : array_field(doc, "machines")) registry.register_machine(machine_from_json(m));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed registry document: ") + e.what());
    }
    return registry;
}

json to_json(const PropertyElement& p) {
    json j{{"iri", p.iri}, {"name", p.name}, {"datatype", to_string(p.datatype)}};
    if (p.unit) j["unit"] = *p.unit;
    if (p.constraint) {
        json c = json::object();
        if (p.constraint->min) c["min"] = *p.constraint->min;
        if (p.constraint->max) c["max"] = *p.constraint->max;
        if (!p.constraint->enumeration.empty()) c["enum"] = p.constraint->enumeration;
        j["constraint"] = c;
    }
    return j;
}

json to_json(const Capability& c) {
    json inputs = json::array(), outputs = json::array();
    for (const auto& p : c.inputs) inputs.push_back(to_json(p));
    for (const auto& p : c.outputs) outputs.push_back(to_json(p));
    return {{"iri", c.iri}, {"name", c.name}, {"inputs", inputs}, {"outputs", outputs}};
}

json to_json(const Skill& s) {
    json params = json::array(), results = json::array();
    for (const auto& v : s.parameters) params.push_back(variable_to_json(v));
    for (const auto& v : s.results) results.push_back(variable_to_json(v));
    json iface{{"transport", to_string(s.interface.transport)}, {"skillId", s.interface.skill_id}};
    if (!s.interface.base_url.empty()) iface["baseUrl"] = s.interface.base_url;
    return {{"iri", s.iri},          {"name", s.name},       {"capability", s.capability_iri},
            {"parameters", params}, {"results", results}, {"interface", iface}};
}

json to_json(const MachineDefinition& m) {
    json skills = json::array();
    for (const auto& s : m.skills) skills.push_back(to_json(s));
    return {{"iri", m.iri}, {"name", m.name}, {"skills", skills}};
}

json to_json(const Registry& registry) {
    json caps = json::array(), machines = json::array();
    for (const auto& [iri, c] : registry.capabilities()) caps.push_back(to_json(c));
    for (const auto& [iri, m] : registry.machines()) machines.push_back(to_json(*registry.machine_definition(iri)));
    return {{"capabilities", caps}, {"machines", machines}};
}

} // namespace skillflow
