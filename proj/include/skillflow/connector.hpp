#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "skillflow/plant.hpp"
#include "skillflow/registry.hpp"
#include "skillflow/state_machine.hpp"

namespace skillflow {

struct SkillStatus {
    SkillState state = SkillState::Idle;
    std::uint64_t seq = 0;
    VariableMap outputs;
};

/// The boundary between the engine and whatever executes skills. Transport
/// failures surface as Error(TransportError); protocol rejections keep their
/// own codes (WrongState, IllegalTransition, ...).
class SkillConnector {
public:
    virtual ~SkillConnector() = default;

    virtual void set_parameters(const Skill& skill, const VariableMap& values) = 0;
    /// Returns the acting state the skill entered.
    virtual SkillState invoke(const Skill& skill, TransitionCommand command) = 0;
    virtual SkillStatus status(const Skill& skill) = 0;
    virtual std::vector<StateEvent> poll_events(const Skill& skill, std::uint64_t since,
                                                std::chrono::milliseconds timeout) = 0;
};

/// Talks to VirtualModule objects in the same process, looked up by skill id.
class InProcessConnector : public SkillConnector {
public:
    void attach(std::shared_ptr<VirtualModule> module);
    void detach(const VirtualModule* module);

    void set_parameters(const Skill& skill, const VariableMap& values) override;
    SkillState invoke(const Skill& skill, TransitionCommand command) override;
    SkillStatus status(const Skill& skill) override;
    std::vector<StateEvent> poll_events(const Skill& skill, std::uint64_t since,
                                        std::chrono::milliseconds timeout) override;

private:
    std::shared_ptr<VirtualModule> module_for(const Skill& skill) const;

    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<VirtualModule>, std::less<>> by_skill_id_;
};

/// Dispatches on the skill's declared transport.
class RoutingConnector : public SkillConnector {
public:
    RoutingConnector(std::shared_ptr<SkillConnector> in_process, std::shared_ptr<SkillConnector> http)
        : in_process_(std::move(in_process)), http_(std::move(http)) {}

    void set_parameters(const Skill& skill, const VariableMap& values) override;
    SkillState invoke(const Skill& skill, TransitionCommand command) override;
    SkillStatus status(const Skill& skill) override;
    std::vector<StateEvent> poll_events(const Skill& skill, std::uint64_t since,
                                        std::chrono::milliseconds timeout) override;

private:
    SkillConnector& route(const Skill& skill) const;

    std::shared_ptr<SkillConnector> in_process_;
    std::shared_ptr<SkillConnector> http_;
};

} // namespace skillflow
