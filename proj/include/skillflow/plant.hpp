#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "skillflow/expr.hpp"
#include "skillflow/registry.hpp"
#include "skillflow/state_machine.hpp"

namespace skillflow {

inline constexpr std::chrono::milliseconds kDefaultActingDuration{50};

struct SkillBehavior {
    /// Time spent in each acting state before it auto-advances.
    std::map<SkillState, std::chrono::milliseconds> durations;
    /// Result variable -> program over the skill's parameter names.
    std::map<std::string, ValueExpr> outputs;

    std::chrono::milliseconds duration(SkillState state) const;
};

struct VirtualModuleConfig {
    MachineDefinition machine;
    /// Keyed by the transport-local skill id.
    std::map<std::string, SkillBehavior> behaviors;
    std::string host = "127.0.0.1";
    /// 0 binds any free port.
    std::uint16_t port = 0;
};

enum class FailureMode { Stop, Abort };
enum class FailurePhase { Starting, Execute, Completing };

std::string_view to_string(FailureMode mode) noexcept;
std::string_view to_string(FailurePhase phase) noexcept;
std::optional<FailureMode> parse_failure_mode(std::string_view text) noexcept;
/// Accepts "duringExecute", "Execute" and "execute" spellings.
std::optional<FailurePhase> parse_failure_phase(std::string_view text) noexcept;

struct FailureInjection {
    FailureMode mode = FailureMode::Abort;
    FailurePhase phase = FailurePhase::Execute;
    bool one_shot = true;
};

struct SkillRuntimeRecord {
    std::string skill_id;
    SkillState state = SkillState::Idle;
    VariableMap parameters;
    VariableMap outputs;
    std::uint64_t seq = 0;
};

/// One accepted transition command, with the parameters in force when it
/// arrived.
struct InvocationRecord {
    std::uint64_t seq = 0;
    TransitionCommand command = TransitionCommand::Start;
    VariableMap parameters;
};

/// A simulated plant module. Each hosted skill runs the shared state
/// machine: commands enter an acting state and return at once, a worker
/// thread auto-advances acting states after their configured duration.
/// All state changes of one module are serialized by a single mutex.
class VirtualModule {
public:
    using Listener = std::function<void(const std::string& skill_id, const StateEvent& event)>;

    /// Throws ConfigError.
    explicit VirtualModule(VirtualModuleConfig config);
    ~VirtualModule();

    VirtualModule(const VirtualModule&) = delete;
    VirtualModule& operator=(const VirtualModule&) = delete;

    const MachineDefinition& machine() const noexcept { return config_.machine; }
    const VirtualModuleConfig& config() const noexcept { return config_; }
    std::vector<std::string> skill_ids() const;
    bool hosts(std::string_view skill_id) const;

    /// Only in Idle. Throws WrongState, UnknownParameter, DatatypeMismatch, UnknownSkill.
    void set_parameters(std::string_view skill_id, const VariableMap& values);
    /// Returns the acting state entered. Throws IllegalTransition, UnknownSkill.
    SkillState invoke_transition(std::string_view skill_id, TransitionCommand command);
    SkillRuntimeRecord get_state(std::string_view skill_id) const;
    /// Events with seq > since; waits up to `timeout` when none are pending.
    std::vector<StateEvent> poll_events(std::string_view skill_id, std::uint64_t since,
                                        std::chrono::milliseconds timeout) const;
    void inject_failure(std::string_view skill_id, FailureInjection injection);

    std::vector<StateEvent> events(std::string_view skill_id) const;
    std::vector<InvocationRecord> invocations(std::string_view skill_id) const;

    void add_listener(Listener listener);

private:
    using Clock = std::chrono::steady_clock;

    struct Runtime {
        Skill skill;
        SkillBehavior behavior;
        SkillState state = SkillState::Idle;
        VariableMap parameters;
        VariableMap outputs;
        std::vector<StateEvent> events;
        std::vector<InvocationRecord> invocations;
        std::vector<FailureInjection> injections;
        std::optional<FailureInjection> armed;
        std::optional<Clock::time_point> deadline;
    };

    Runtime& runtime(std::string_view skill_id);
    const Runtime& runtime(std::string_view skill_id) const;
    void enter(const std::string& id, Runtime& rt, SkillState next, std::vector<std::pair<std::string, StateEvent>>& fired);
    void finish_acting(const std::string& id, Runtime& rt, std::vector<std::pair<std::string, StateEvent>>& fired);
    void notify(const std::vector<std::pair<std::string, StateEvent>>& fired);
    void run(std::stop_token stop);

    VirtualModuleConfig config_;
    mutable std::mutex mu_;
    mutable std::condition_variable_any cv_;
    std::map<std::string, Runtime, std::less<>> skills_;
    std::vector<Listener> listeners_;
    bool stopping_ = false;
    bool changed_ = false;
    std::jthread worker_;
};

VirtualModuleConfig module_config_from_json(const nlohmann::json& j);
/// Plant file: {"modules": [{machine, behavior, host?, port?}, ...]}.
std::vector<VirtualModuleConfig> load_plant_config(std::string_view document);

} // namespace skillflow
