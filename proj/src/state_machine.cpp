#include "skillflow/state_machine.hpp"

#include <string>

#include "skillflow/error.hpp"

namespace skillflow {

namespace {

constexpr SkillState kClearingTarget = SkillState::Stopped;

} // namespace

std::string_view to_string(SkillState state) noexcept {
    switch (state) {
    case SkillState::Idle: return "Idle";
    case SkillState::Starting: return "Starting";
    case SkillState::Execute: return "Execute";
    case SkillState::Completing: return "Completing";
    case SkillState::Complete: return "Complete";
    case SkillState::Resetting: return "Resetting";
    case SkillState::Stopping: return "Stopping";
    case SkillState::Stopped: return "Stopped";
    case SkillState::Clearing: return "Clearing";
    case SkillState::Aborting: return "Aborting";
    case SkillState::Aborted: return "Aborted";
    }
    return "Idle";
}

std::string_view to_string(TransitionCommand command) noexcept {
    switch (command) {
    case TransitionCommand::Start: return "Start";
    case TransitionCommand::Stop: return "Stop";
    case TransitionCommand::Abort: return "Abort";
    case TransitionCommand::Reset: return "Reset";
    case TransitionCommand::Clear: return "Clear";
    }
    return "Start";
}

std::optional<SkillState> parse_skill_state(std::string_view text) noexcept {
    for (SkillState s : kAllStates)
        if (to_string(s) == text) return s;
    return std::nullopt;
}

std::optional<TransitionCommand> parse_command(std::string_view text) noexcept {
    for (TransitionCommand c : kAllCommands) {
        std::string_view name = to_string(c);
        if (name == text) return c;
        if (text.size() == name.size() && text[0] == static_cast<char>(name[0] - 'A' + 'a') &&
            text.substr(1) == name.substr(1))
            return c;
    }
    return std::nullopt;
}

bool is_acting(SkillState state) noexcept {
    switch (state) {
    case SkillState::Starting:
    case SkillState::Execute:
    case SkillState::Completing:
    case SkillState::Resetting:
    case SkillState::Stopping:
    case SkillState::Clearing:
    case SkillState::Aborting: return true;
    default: return false;
    }
}

StateClass classify(SkillState state) noexcept {
    Activity activity = is_acting(state) ? Activity::Acting : Activity::Waiting;
    Outcome outcome = Outcome::Nominal;
    if (state == SkillState::Complete) outcome = Outcome::FinalSuccess;
    else if (state == SkillState::Stopped || state == SkillState::Aborted) outcome = Outcome::Failure;
    return {activity, outcome};
}

std::optional<SkillState> try_apply(SkillState state, TransitionCommand command) noexcept {
    switch (command) {
    case TransitionCommand::Start:
        if (state == SkillState::Idle) return SkillState::Starting;
        return std::nullopt;
    case TransitionCommand::Stop:
        switch (state) {
        case SkillState::Stopping:
        case SkillState::Stopped:
        case SkillState::Clearing:
        case SkillState::Aborting:
        case SkillState::Aborted: return std::nullopt;
        default: return SkillState::Stopping;
        }
    case TransitionCommand::Abort:
        if (state == SkillState::Aborting || state == SkillState::Aborted) return std::nullopt;
        return SkillState::Aborting;
    case TransitionCommand::Clear:
        if (state == SkillState::Aborted) return SkillState::Clearing;
        return std::nullopt;
    case TransitionCommand::Reset:
        if (state == SkillState::Complete || state == SkillState::Stopped) return SkillState::Resetting;
        return std::nullopt;
    }
    return std::nullopt;
}

SkillState apply_command(SkillState state, TransitionCommand command) {
    if (auto next = try_apply(state, command)) return *next;
    throw Error(ErrorCode::IllegalTransition,
                "illegal transition: " + std::string(to_string(command)) + " in state " + std::string(to_string(state)),
                std::string(to_string(state)));
}

std::optional<SkillState> try_complete_acting(SkillState state) noexcept {
    switch (state) {
    case SkillState::Starting: return SkillState::Execute;
    case SkillState::Execute: return SkillState::Completing;
    case SkillState::Completing: return SkillState::Complete;
    case SkillState::Resetting: return SkillState::Idle;
    case SkillState::Stopping: return SkillState::Stopped;
    case SkillState::Clearing: return kClearingTarget;
    case SkillState::Aborting: return SkillState::Aborted;
    default: return std::nullopt;
    }
}

SkillState complete_acting(SkillState state) {
    if (auto next = try_complete_acting(state)) return *next;
    throw Error(ErrorCode::NotActing, "state " + std::string(to_string(state)) + " is not an acting state",
                std::string(to_string(state)));
}

} // namespace skillflow
