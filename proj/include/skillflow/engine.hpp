#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "skillflow/connector.hpp"
#include "skillflow/diagnostic.hpp"
#include "skillflow/notification.hpp"
#include "skillflow/process.hpp"
#include "skillflow/registry.hpp"
#include "skillflow/resolution.hpp"

namespace skillflow {

/// Process error codes thrown at tasks and matched by boundary filters.
namespace errors {
inline constexpr std::string_view kSkillStopped = "SkillStopped";
inline constexpr std::string_view kSkillAborted = "SkillAborted";
inline constexpr std::string_view kSkillUnreachable = "SkillUnreachable";
inline constexpr std::string_view kParameterConstraint = "ParameterConstraint";
inline constexpr std::string_view kUnknownVariable = "UnknownVariable";
inline constexpr std::string_view kNoFlowEnabled = "NoFlowEnabled";
inline constexpr std::string_view kExpressionError = "ExpressionError";
} // namespace errors

enum class InstanceStatus { Running, WaitingUser, Completed, Faulted, Cancelled };
std::string_view to_string(InstanceStatus status) noexcept;
std::optional<InstanceStatus> parse_instance_status(std::string_view text) noexcept;
inline bool is_ended(InstanceStatus s) noexcept {
    return s == InstanceStatus::Completed || s == InstanceStatus::Faulted || s == InstanceStatus::Cancelled;
}

enum class EventKind {
    NodeEntered,
    NodeCompleted,
    VariableSet,
    SkillStateObserved,
    ErrorThrown,
    ErrorCaught,
    InstanceEnded
};
std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> parse_event_kind(std::string_view text) noexcept;

struct EngineEvent {
    std::uint64_t seq = 0;
    EventKind kind = EventKind::NodeEntered;
    std::string node;
    nlohmann::json payload = nlohmann::json::object();

    bool operator==(const EngineEvent&) const = default;
};

nlohmann::json to_json(const EngineEvent& event);
EngineEvent event_from_json(const nlohmann::json& j);

struct WorkItem {
    std::string instance_id;
    std::string task_id;
    std::vector<FormField> fields;
    std::int64_t created_at_ms = 0;
};

struct DelegationRequest {
    std::string task_id;
    std::string skill_iri;
    TransitionCommand transition = TransitionCommand::Start;
    VariableMap parameters;
};

struct InstanceView {
    std::string instance_id;
    std::string definition_id;
    InstanceStatus status = InstanceStatus::Running;
    std::vector<std::string> tokens; // node ids, one per live activation
    std::map<std::string, std::map<std::string, int>> join_arrivals; // gateway -> flow -> count
    VariableMap variables;
    std::vector<WorkItem> work_items;
    std::map<std::string, SkillState> last_skill_state; // task id -> state
    std::vector<DelegationRequest> delegations;
    std::vector<Diagnostic> diagnostics;
    std::vector<EngineEvent> history; // events with seq > the requested cursor
    std::uint64_t last_seq = 0;
};

nlohmann::json to_json(const InstanceView& view);

struct EngineOptions {
    /// When false the engine starts no threads: skill events, timers and
    /// deferred resumptions only happen through explicit calls.
    bool autonomous = true;
    std::chrono::milliseconds poll_timeout{200};
    /// Upper bound for bringing a skill back to Idle before delegation.
    std::chrono::milliseconds prepare_timeout{5000};
    /// Called under the instance lock for every appended event.
    std::function<void(const std::string& instance_id, const EngineEvent& event)> on_event;
};

/// Token-based executor of resolved processes. All stimuli for one instance
/// are applied one at a time; distinct instances progress in parallel.
class Engine {
public:
    Engine(std::shared_ptr<SkillConnector> connector, std::shared_ptr<NotificationSink> sink,
           EngineOptions options = {});
    ~Engine();

    Engine(const Engine&) = delete;
    Engine& operator=(const Engine&) = delete;

    /// Throws PlanMismatch, ValidationFailed.
    std::string start_instance(const ProcessDefinition& definition, const BindingPlan& plan,
                               const Registry& registry, const VariableMap& initial = {},
                               std::string instance_id = {});

    /// Throws UnknownInstance, NoOpenWorkItem, MissingField, DatatypeMismatch.
    void complete_user_task(std::string_view instance_id, std::string_view task_id, const VariableMap& values);

    /// Feeds a skill state observation to the task waiting on it. `outputs`
    /// overrides reading results from the connector on Complete.
    void handle_skill_event(std::string_view instance_id, std::string_view task_id, SkillState observed,
                            std::optional<VariableMap> outputs = std::nullopt);

    /// Expires the oldest pending timer at `node`. Throws UnknownInstance, NotFound.
    void fire_timer(std::string_view instance_id, std::string_view node);

    /// Throws UnknownInstance, AlreadyEnded.
    void cancel_instance(std::string_view instance_id);

    /// Throws UnknownInstance.
    InstanceView snapshot(std::string_view instance_id, std::uint64_t since = 0) const;
    /// Long-poll: events with seq > since, waiting up to `timeout` when none.
    std::vector<EngineEvent> events_since(std::string_view instance_id, std::uint64_t since,
                                          std::chrono::milliseconds timeout) const;
    /// Blocks until `pred` holds for the instance or `timeout` passes.
    bool wait_for(std::string_view instance_id, const std::function<bool(const InstanceView&)>& pred,
                  std::chrono::milliseconds timeout) const;

    std::vector<std::string> instance_ids() const;
    std::vector<NotificationRecord> notifications() const;

    /// Runs deferred work (skill handoffs) queued so far. Only needed when
    /// not autonomous.
    void run_deferred();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Re-executes a recorded history against `definition` and `plan` with no
/// live skills: user completions, timer expiries and skill observations are
/// replayed in their recorded order. Returns the final view.
InstanceView replay_instance(const ProcessDefinition& definition, const BindingPlan& plan,
                             const Registry& registry, const std::vector<EngineEvent>& history);

} // namespace skillflow
