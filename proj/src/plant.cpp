#include "skillflow/plant.hpp"

#include <algorithm>

#include "skillflow/error.hpp"

namespace skillflow {

using nlohmann::json;

std::chrono::milliseconds SkillBehavior::duration(SkillState state) const {
    auto it = durations.find(state);
    return it == durations.end() ? kDefaultActingDuration : it->second;
}

std::string_view to_string(FailureMode mode) noexcept { return mode == FailureMode::Stop ? "stop" : "abort"; }

std::string_view to_string(FailurePhase phase) noexcept {
    switch (phase) {
    case FailurePhase::Starting: return "duringStarting";
    case FailurePhase::Execute: return "duringExecute";
    case FailurePhase::Completing: return "duringCompleting";
    }
    return "duringExecute";
}

std::optional<FailureMode> parse_failure_mode(std::string_view text) noexcept {
    if (text == "stop" || text == "Stop") return FailureMode::Stop;
    if (text == "abort" || text == "Abort") return FailureMode::Abort;
    return std::nullopt;
}

std::optional<FailurePhase> parse_failure_phase(std::string_view text) noexcept {
    if (text.starts_with("during")) text.remove_prefix(6);
    if (text == "Starting" || text == "starting") return FailurePhase::Starting;
    if (text == "Execute" || text == "execute") return FailurePhase::Execute;
    if (text == "Completing" || text == "completing") return FailurePhase::Completing;
    return std::nullopt;
}

namespace {

SkillState phase_state(FailurePhase phase) {
    switch (phase) {
    case FailurePhase::Starting: return SkillState::Starting;
    case FailurePhase::Execute: return SkillState::Execute;
    case FailurePhase::Completing: return SkillState::Completing;
    }
    return SkillState::Execute;
}

[[noreturn]] void config_error(const std::string& message, const std::string& subject = {}) {
    throw Error(ErrorCode::ConfigError, message, subject);
}

} // namespace

VirtualModule::VirtualModule(VirtualModuleConfig config) : config_(std::move(config)) {
    for (const auto& skill : config_.machine.skills) {
        const std::string& id = skill.interface.skill_id;
        if (id.empty()) config_error("skill without skillId", skill.iri);
        Runtime rt;
        rt.skill = skill;
        if (auto it = config_.behaviors.find(id); it != config_.behaviors.end()) rt.behavior = it->second;
        for (const auto& [state, d] : rt.behavior.durations) {
            if (!is_acting(state)) config_error("duration given for waiting state " + std::string(to_string(state)), id);
            if (d.count() < 0) config_error("negative duration", id);
        }
        for (const auto& [result, program] : rt.behavior.outputs) {
            if (!skill.find_result(result)) config_error("output program for undeclared result '" + result + "'", id);
            if (const auto* e = program.expression())
                for (const auto& var : e->variables())
                    if (!skill.find_parameter(var))
                        config_error("output program references unknown parameter '" + var + "'", id);
        }
        if (!skills_.emplace(id, std::move(rt)).second) config_error("duplicate skillId", id);
    }
    for (const auto& [id, behavior] : config_.behaviors)
        if (!skills_.contains(id)) config_error("behavior for unknown skill", id);
    worker_ = std::jthread([this](std::stop_token st) { run(st); });
}

VirtualModule::~VirtualModule() {
    {
        std::lock_guard lock(mu_);
        stopping_ = true;
    }
    cv_.notify_all();
    worker_.request_stop();
    if (worker_.joinable()) worker_.join();
}

std::vector<std::string> VirtualModule::skill_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, rt] : skills_) out.push_back(id);
    return out;
}

bool VirtualModule::hosts(std::string_view skill_id) const { return skills_.contains(skill_id); }

VirtualModule::Runtime& VirtualModule::runtime(std::string_view skill_id) {
    auto it = skills_.find(skill_id);
    if (it == skills_.end())
        throw Error(ErrorCode::UnknownSkill, "unknown skill " + std::string(skill_id), std::string(skill_id));
    return it->second;
}

const VirtualModule::Runtime& VirtualModule::runtime(std::string_view skill_id) const {
    return const_cast<VirtualModule*>(this)->runtime(skill_id);
}

void VirtualModule::set_parameters(std::string_view skill_id, const VariableMap& values) {
    std::lock_guard lock(mu_);
    Runtime& rt = runtime(skill_id);
    if (rt.state != SkillState::Idle)
        throw Error(ErrorCode::WrongState, "parameters can only be set in Idle, skill is " +
                                               std::string(to_string(rt.state)),
                    std::string(to_string(rt.state)));
    VariableMap staged;
    for (const auto& [name, value] : values) {
        const SkillVariable* p = rt.skill.find_parameter(name);
        if (!p) throw Error(ErrorCode::UnknownParameter, "unknown parameter '" + name + "'", name);
        if (!conforms(value, p->datatype))
            throw Error(ErrorCode::DatatypeMismatch,
                        "parameter '" + name + "' expects " + std::string(to_string(p->datatype)), name);
        staged[name] = coerce(value, p->datatype);
    }
    for (auto& [name, value] : staged) rt.parameters[name] = std::move(value);
}

SkillState VirtualModule::invoke_transition(std::string_view skill_id, TransitionCommand command) {
    std::vector<std::pair<std::string, StateEvent>> fired;
    SkillState entered;
    {
        std::lock_guard lock(mu_);
        Runtime& rt = runtime(skill_id);
        entered = apply_command(rt.state, command);
        enter(std::string(skill_id), rt, entered, fired);
        rt.invocations.push_back({rt.events.back().seq, command, rt.parameters});
    }
    notify(fired);
    return entered;
}

SkillRuntimeRecord VirtualModule::get_state(std::string_view skill_id) const {
    std::lock_guard lock(mu_);
    const Runtime& rt = runtime(skill_id);
    return {std::string(skill_id), rt.state, rt.parameters, rt.outputs, rt.events.size()};
}

std::vector<StateEvent> VirtualModule::poll_events(std::string_view skill_id, std::uint64_t since,
                                                   std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    const Runtime& rt = runtime(skill_id);
    cv_.wait_for(lock, timeout, [&] { return stopping_ || rt.events.size() > since; });
    std::vector<StateEvent> out;
    for (std::size_t i = since; i < rt.events.size(); ++i) out.push_back(rt.events[i]);
    return out;
}

void VirtualModule::inject_failure(std::string_view skill_id, FailureInjection injection) {
    std::lock_guard lock(mu_);
    runtime(skill_id).injections.push_back(injection);
}

std::vector<StateEvent> VirtualModule::events(std::string_view skill_id) const {
    std::lock_guard lock(mu_);
    return runtime(skill_id).events;
}

std::vector<InvocationRecord> VirtualModule::invocations(std::string_view skill_id) const {
    std::lock_guard lock(mu_);
    return runtime(skill_id).invocations;
}

void VirtualModule::add_listener(Listener listener) {
    std::lock_guard lock(mu_);
    listeners_.push_back(std::move(listener));
}

void VirtualModule::enter(const std::string& id, Runtime& rt, SkillState next,
                          std::vector<std::pair<std::string, StateEvent>>& fired) {
    SkillState prev = rt.state;
    if (prev == SkillState::Complete) rt.outputs.clear();
    if (prev == SkillState::Resetting && next == SkillState::Idle) {
        rt.parameters.clear();
        rt.outputs.clear();
    }
    rt.state = next;
    rt.armed.reset();
    rt.deadline.reset();
    StateEvent ev{rt.events.size() + 1, next};
    rt.events.push_back(ev);
    fired.emplace_back(id, ev);
    if (is_acting(next)) {
        auto it = std::find_if(rt.injections.begin(), rt.injections.end(),
                               [&](const FailureInjection& f) { return phase_state(f.phase) == next; });
        if (it != rt.injections.end()) {
            rt.armed = *it;
            if (it->one_shot) rt.injections.erase(it);
        }
        rt.deadline = Clock::now() + rt.behavior.duration(next);
        changed_ = true;
    }
    cv_.notify_all();
}

void VirtualModule::finish_acting(const std::string& id, Runtime& rt,
                                  std::vector<std::pair<std::string, StateEvent>>& fired) {
    if (rt.armed) {
        TransitionCommand cmd = rt.armed->mode == FailureMode::Stop ? TransitionCommand::Stop : TransitionCommand::Abort;
        if (auto target = try_apply(rt.state, cmd)) {
            enter(id, rt, *target, fired);
            return;
        }
    }
    SkillState next = complete_acting(rt.state);
    if (next != SkillState::Complete) {
        enter(id, rt, next, fired);
        return;
    }
    VariableMap outputs;
    try {
        for (const auto& [name, program] : rt.behavior.outputs)
            outputs[name] = coerce(program.evaluate(rt.parameters), rt.skill.find_result(name)->datatype);
    } catch (const Error&) {
        // A result that cannot be computed is a skill fault.
        enter(id, rt, SkillState::Aborting, fired);
        return;
    }
    enter(id, rt, SkillState::Complete, fired);
    rt.outputs = std::move(outputs);
}

void VirtualModule::notify(const std::vector<std::pair<std::string, StateEvent>>& fired) {
    if (fired.empty()) return;
    std::vector<Listener> listeners;
    {
        std::lock_guard lock(mu_);
        listeners = listeners_;
    }
    for (const auto& [id, ev] : fired)
        for (const auto& l : listeners) l(id, ev);
}

void VirtualModule::run(std::stop_token stop) {
    std::unique_lock lock(mu_);
    while (!stop.stop_requested()) {
        std::optional<Clock::time_point> next;
        for (const auto& [id, rt] : skills_)
            if (rt.deadline && (!next || *rt.deadline < *next)) next = rt.deadline;
        if (next) cv_.wait_until(lock, stop, *next, [&] { return changed_; });
        else cv_.wait(lock, stop, [&] { return changed_; });
        changed_ = false;
        if (stop.stop_requested()) break;
        std::vector<std::pair<std::string, StateEvent>> fired;
        auto now = Clock::now();
        for (auto& [id, rt] : skills_) {
            if (rt.deadline && *rt.deadline <= now) {
                rt.deadline.reset();
                finish_acting(id, rt, fired);
            }
        }
        if (!fired.empty()) {
            lock.unlock();
            notify(fired);
            lock.lock();
        }
    }
}

VirtualModuleConfig module_config_from_json(const json& j) {
    try {
        VirtualModuleConfig config;
        config.machine = machine_from_json(j.at("machine"));
        config.host = j.value("host", std::string("127.0.0.1"));
        config.port = j.value("port", std::uint16_t{0});
        if (j.contains("behavior")) {
            for (const auto& [skill_id, b] : j.at("behavior").items()) {
                SkillBehavior behavior;
                if (b.contains("durations")) {
                    for (const auto& [state_name, ms] : b.at("durations").items()) {
                        auto state = parse_skill_state(state_name);
                        if (!state) config_error("unknown state '" + state_name + "' in durations", skill_id);
                        if (!ms.is_number_integer() || ms.get<long long>() < 0)
                            config_error("durations must be non-negative integers (ms)", skill_id);
                        behavior.durations[*state] = std::chrono::milliseconds(ms.get<long long>());
                    }
                }
                if (b.contains("outputs"))
                    for (const auto& [result, program] : b.at("outputs").items())
                        behavior.outputs.emplace(result, ValueExpr::parse(program.get<std::string>()));
                config.behaviors.emplace(skill_id, std::move(behavior));
            }
        }
        return config;
    } catch (const json::exception& e) {
        config_error(std::string("malformed module config: ") + e.what());
    } catch (const ExprParseError& e) {
        config_error(std::string("invalid output program: ") + e.what());
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError) throw;
        config_error(std::string("invalid machine descriptor: ") + e.what(), e.subject());
    }
}

std::vector<VirtualModuleConfig> load_plant_config(std::string_view document) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        config_error(std::string("malformed plant config: ") + e.what());
    }
    std::vector<VirtualModuleConfig> out;
    if (!doc.contains("modules") || !doc.at("modules").is_array()) config_error("plant config needs a modules array");
    for (const auto& m : doc.at("modules")) out.push_back(module_config_from_json(m));
    return out;
}

} // namespace skillflow
