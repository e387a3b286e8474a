#include "skillflow/connector.hpp"

#include "skillflow/error.hpp"

namespace skillflow {

void InProcessConnector::attach(std::shared_ptr<VirtualModule> module) {
    std::lock_guard lock(mu_);
    for (const auto& id : module->skill_ids()) by_skill_id_[id] = module;
}

void InProcessConnector::detach(const VirtualModule* module) {
    std::lock_guard lock(mu_);
    std::erase_if(by_skill_id_, [&](const auto& kv) { return kv.second.get() == module; });
}

std::shared_ptr<VirtualModule> InProcessConnector::module_for(const Skill& skill) const {
    std::lock_guard lock(mu_);
    auto it = by_skill_id_.find(skill.interface.skill_id);
    if (it == by_skill_id_.end())
        throw Error(ErrorCode::TransportError, "no in-process module hosts skill " + skill.interface.skill_id,
                    skill.iri);
    return it->second;
}

void InProcessConnector::set_parameters(const Skill& skill, const VariableMap& values) {
    module_for(skill)->set_parameters(skill.interface.skill_id, values);
}

SkillState InProcessConnector::invoke(const Skill& skill, TransitionCommand command) {
    return module_for(skill)->invoke_transition(skill.interface.skill_id, command);
}

SkillStatus InProcessConnector::status(const Skill& skill) {
    auto rec = module_for(skill)->get_state(skill.interface.skill_id);
    return {rec.state, rec.seq, std::move(rec.outputs)};
}

std::vector<StateEvent> InProcessConnector::poll_events(const Skill& skill, std::uint64_t since,
                                                        std::chrono::milliseconds timeout) {
    return module_for(skill)->poll_events(skill.interface.skill_id, since, timeout);
}

SkillConnector& RoutingConnector::route(const Skill& skill) const {
    const auto& target = skill.interface.transport == Transport::Http ? http_ : in_process_;
    if (!target)
        throw Error(ErrorCode::TransportError, "no connector for the transport of " + skill.iri, skill.iri);
    return *target;
}

void RoutingConnector::set_parameters(const Skill& skill, const VariableMap& values) {
    route(skill).set_parameters(skill, values);
}
SkillState RoutingConnector::invoke(const Skill& skill, TransitionCommand command) {
    return route(skill).invoke(skill, command);
}
SkillStatus RoutingConnector::status(const Skill& skill) { return route(skill).status(skill); }
std::vector<StateEvent> RoutingConnector::poll_events(const Skill& skill, std::uint64_t since,
                                                      std::chrono::milliseconds timeout) {
    return route(skill).poll_events(skill, since, timeout);
}

} // namespace skillflow
