#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>

namespace skillflow {

enum class SkillState {
    Idle,
    Starting,
    Execute,
    Completing,
    Complete,
    Resetting,
    Stopping,
    Stopped,
    Clearing,
    Aborting,
    Aborted,
};

enum class TransitionCommand { Start, Stop, Abort, Reset, Clear };

inline constexpr std::array<SkillState, 11> kAllStates{
    SkillState::Idle,     SkillState::Starting, SkillState::Execute,  SkillState::Completing,
    SkillState::Complete, SkillState::Resetting, SkillState::Stopping, SkillState::Stopped,
    SkillState::Clearing, SkillState::Aborting, SkillState::Aborted,
};

inline constexpr std::array<TransitionCommand, 5> kAllCommands{
    TransitionCommand::Start, TransitionCommand::Stop, TransitionCommand::Abort,
    TransitionCommand::Reset, TransitionCommand::Clear,
};

/// Wire spellings, case-sensitive.
std::string_view to_string(SkillState state) noexcept;
std::string_view to_string(TransitionCommand command) noexcept;
std::optional<SkillState> parse_skill_state(std::string_view text) noexcept;
/// Accepts the lower-case path form used on the wire ("start", "abort", ...)
/// as well as the enum spelling.
std::optional<TransitionCommand> parse_command(std::string_view text) noexcept;

enum class Activity { Acting, Waiting };
enum class Outcome { Nominal, Failure, FinalSuccess };

struct StateClass {
    Activity activity;
    Outcome outcome;
    bool operator==(const StateClass&) const = default;
};

bool is_acting(SkillState state) noexcept;
StateClass classify(SkillState state) noexcept;

/// Target state of `command` in `state`, or nullopt when the pair is illegal.
std::optional<SkillState> try_apply(SkillState state, TransitionCommand command) noexcept;
/// Throws IllegalTransition.
SkillState apply_command(SkillState state, TransitionCommand command);

/// Where an acting state goes once its work is done. Clearing resolves to
/// Stopped so an aborted skill still needs Reset before it is Idle again.
std::optional<SkillState> try_complete_acting(SkillState state) noexcept;
/// Throws NotActing.
SkillState complete_acting(SkillState state);

/// One observed state change of a skill; `seq` increases by one per change.
struct StateEvent {
    std::uint64_t seq = 0;
    SkillState state = SkillState::Idle;
    bool operator==(const StateEvent&) const = default;
};

} // namespace skillflow
