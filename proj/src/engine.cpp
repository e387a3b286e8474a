#include "skillflow/engine.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <iostream>
#include <mutex>
#include <thread>

#include "skillflow/error.hpp"

namespace skillflow {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::string_view to_string(InstanceStatus status) noexcept {
    switch (status) {
    case InstanceStatus::Running: return "Running";
    case InstanceStatus::WaitingUser: return "WaitingUser";
    case InstanceStatus::Completed: return "Completed";
    case InstanceStatus::Faulted: return "Faulted";
    case InstanceStatus::Cancelled: return "Cancelled";
    }
    return "Running";
}

std::optional<InstanceStatus> parse_instance_status(std::string_view text) noexcept {
    for (auto s : {InstanceStatus::Running, InstanceStatus::WaitingUser, InstanceStatus::Completed,
                   InstanceStatus::Faulted, InstanceStatus::Cancelled})
        if (to_string(s) == text) return s;
    return std::nullopt;
}

std::string_view to_string(EventKind kind) noexcept {
    switch (kind) {
    case EventKind::NodeEntered: return "NodeEntered";
    case EventKind::NodeCompleted: return "NodeCompleted";
    case EventKind::VariableSet: return "VariableSet";
    case EventKind::SkillStateObserved: return "SkillStateObserved";
    case EventKind::ErrorThrown: return "ErrorThrown";
    case EventKind::ErrorCaught: return "ErrorCaught";
    case EventKind::InstanceEnded: return "InstanceEnded";
    }
    return "NodeEntered";
}

std::optional<EventKind> parse_event_kind(std::string_view text) noexcept {
    for (auto k : {EventKind::NodeEntered, EventKind::NodeCompleted, EventKind::VariableSet,
                   EventKind::SkillStateObserved, EventKind::ErrorThrown, EventKind::ErrorCaught,
                   EventKind::InstanceEnded})
        if (to_string(k) == text) return k;
    return std::nullopt;
}

json to_json(const EngineEvent& e) {
    return {{"seq", e.seq}, {"kind", to_string(e.kind)}, {"node", e.node}, {"payload", e.payload}};
}

EngineEvent event_from_json(const json& j) {
    try {
        auto kind = parse_event_kind(j.at("kind").get<std::string>());
        if (!kind) throw Error(ErrorCode::ParseError, "unknown event kind " + j.at("kind").dump());
        return {j.at("seq").get<std::uint64_t>(), *kind, j.value("node", std::string{}),
                j.value("payload", json::object())};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed event: ") + e.what());
    }
}

json to_json(const InstanceView& v) {
    json fields_of = json::array();
    for (const auto& w : v.work_items) {
        json fields = json::array();
        for (const auto& f : w.fields) fields.push_back({{"name", f.name}, {"datatype", to_string(f.datatype)}});
        fields_of.push_back({{"taskId", w.task_id}, {"fields", fields}, {"createdAt", w.created_at_ms}});
    }
    json last = json::object();
    for (const auto& [task, state] : v.last_skill_state) last[task] = to_string(state);
    json delegations = json::array();
    for (const auto& d : v.delegations)
        delegations.push_back({{"taskId", d.task_id},
                               {"skill", d.skill_iri},
                               {"transition", to_string(d.transition)},
                               {"parameters", to_json(d.parameters)}});
    json diags = json::array();
    for (const auto& d : v.diagnostics)
        diags.push_back({{"kind", to_string(d.kind)}, {"element", d.element}, {"message", d.message}});
    json history = json::array();
    for (const auto& e : v.history) history.push_back(to_json(e));
    return {{"instanceId", v.instance_id},
            {"definitionId", v.definition_id},
            {"status", to_string(v.status)},
            {"tokens", v.tokens},
            {"joinArrivals", v.join_arrivals},
            {"variables", to_json(v.variables)},
            {"workItems", fields_of},
            {"lastSkillState", last},
            {"delegations", delegations},
            {"diagnostics", diags},
            {"history", history},
            {"lastSeq", v.last_seq}};
}

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string_view node_type(const FlowNode& n) {
    return std::visit(
        [](const auto& s) -> std::string_view {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, StartEvent>) return "startEvent";
            else if constexpr (std::is_same_v<T, EndEvent>) return "endEvent";
            else if constexpr (std::is_same_v<T, ExclusiveGateway>) return "exclusiveGateway";
            else if constexpr (std::is_same_v<T, ParallelGateway>) return "parallelGateway";
            else if constexpr (std::is_same_v<T, UserTask>) return "userTask";
            else if constexpr (std::is_same_v<T, SendTask>) return "sendTask";
            else if constexpr (std::is_same_v<T, CapabilityTask>) return "serviceTask";
            else if constexpr (std::is_same_v<T, TimerCatchEvent>) return "timerCatchEvent";
            else return "boundaryEvent";
        },
        n.spec);
}

// A process-level error raised while stepping a node.
struct Fault {
    std::string code;
    std::string message;
};

Fault fault_from(const Error& e) {
    if (e.code() == ErrorCode::UnknownVariable) return {std::string(errors::kUnknownVariable), e.what()};
    return {std::string(errors::kExpressionError), e.what()};
}

void log_warning(const std::string& message) { std::cerr << "skillflow: " << message << '\n'; }

} // namespace

namespace {

struct Session {
    std::string instance_id;
    std::uint64_t activation_id = 0;
    std::string task_id;
    Skill skill;
    std::uint64_t cursor = 0;
    bool attached = true; // guarded by the instance mutex
    std::atomic<bool> done{false};
};

enum class Wait { User, Skill, SkillAvailable, Timer };

struct Activation {
    std::uint64_t id = 0;
    std::string node;
    Wait wait = Wait::User;
    std::int64_t created_at_ms = 0;
    VariableMap parameters;
    std::shared_ptr<Session> session;
};

struct Arrival {
    std::string node;
    std::string flow;
};

struct Instance {
    std::string id;
    ProcessDefinition def;
    BindingPlan plan;
    std::map<std::string, Skill> skills;
    std::map<std::pair<std::string, std::string>, PropertyElement> linked; // (skill, parameter) -> property

    mutable std::mutex mu;
    mutable std::condition_variable_any cv;
    InstanceStatus status = InstanceStatus::Running;
    std::vector<EngineEvent> history;
    VariableMap vars;
    std::map<std::uint64_t, Activation> activations;
    std::map<std::string, std::map<std::string, int>> arrivals;
    std::map<std::string, SkillState> last_state;
    std::vector<DelegationRequest> delegations;
    std::vector<Diagnostic> diagnostics;
    std::uint64_t next_activation = 1;
};

using Queue = std::deque<Arrival>;

} // namespace

struct Engine::Impl {
    std::shared_ptr<SkillConnector> connector;
    std::shared_ptr<NotificationSink> sink;
    EngineOptions opt;

    mutable std::mutex instances_mu;
    std::map<std::string, std::shared_ptr<Instance>, std::less<>> instances;
    std::uint64_t instance_counter = 0;

    mutable std::mutex notif_mu;
    std::vector<NotificationRecord> notifs;

    struct SkillLock {
        bool held = false;
        std::deque<std::pair<std::string, std::uint64_t>> waiters;
    };
    std::mutex locks_mu;
    std::map<std::string, SkillLock> locks;

    struct Timer {
        Clock::time_point at;
        std::string instance;
        std::uint64_t activation;
    };
    std::mutex sched_mu;
    std::condition_variable_any sched_cv;
    std::deque<std::function<void()>> deferred;
    std::vector<Timer> timers;

    std::mutex monitors_mu;
    std::vector<std::pair<std::shared_ptr<Session>, std::jthread>> monitors;
    std::jthread scheduler;

    Impl(std::shared_ptr<SkillConnector> c, std::shared_ptr<NotificationSink> s, EngineOptions o)
        : connector(std::move(c)), sink(std::move(s)), opt(std::move(o)) {
        if (opt.autonomous) scheduler = std::jthread([this](std::stop_token st) { schedule_loop(st); });
    }

    ~Impl() {
        if (scheduler.joinable()) {
            scheduler.request_stop();
            scheduler.join();
        }
        std::vector<std::pair<std::shared_ptr<Session>, std::jthread>> ms;
        {
            std::lock_guard lock(monitors_mu);
            ms.swap(monitors);
        }
        for (auto& [s, t] : ms) t.request_stop();
        ms.clear();
    }

    std::shared_ptr<Instance> find(std::string_view id) const {
        std::lock_guard lock(instances_mu);
        auto it = instances.find(id);
        if (it == instances.end())
            throw Error(ErrorCode::UnknownInstance, "no instance " + std::string(id), std::string(id));
        return it->second;
    }

    // --- history -----------------------------------------------------------

    void append(Instance& inst, EventKind kind, const std::string& node, json payload = json::object()) {
        EngineEvent e{inst.history.size() + 1, kind, node, std::move(payload)};
        inst.history.push_back(e);
        if (opt.on_event) {
            try {
                opt.on_event(inst.id, e);
            } catch (const std::exception& ex) {
                log_warning(std::string("event hook failed: ") + ex.what());
            }
        }
        inst.cv.notify_all();
    }

    void set_var(Instance& inst, const std::string& node, const std::string& name, const Value& value) {
        inst.vars.insert_or_assign(name, value);
        append(inst, EventKind::VariableSet, node, {{"name", name}, {"value", to_json(value)}});
    }

    void complete_node(Instance& inst, const FlowNode& n, json payload = json::object()) {
        payload["type"] = node_type(n);
        append(inst, EventKind::NodeCompleted, n.id, std::move(payload));
    }

    void emit(const Instance& inst, const std::string& node, Queue& queue) {
        for (const auto* f : inst.def.outgoing(node)) queue.push_back({f->target, f->id});
    }

    // --- skill locks and deferred work ---------------------------------------

    bool acquire_skill(const std::string& iri, const std::string& instance, std::uint64_t activation) {
        std::lock_guard lock(locks_mu);
        auto& l = locks[iri];
        if (!l.held) {
            l.held = true;
            return true;
        }
        l.waiters.emplace_back(instance, activation);
        return false;
    }

    void release_skill(const std::string& iri) {
        std::pair<std::string, std::uint64_t> next;
        {
            std::lock_guard lock(locks_mu);
            auto& l = locks[iri];
            if (l.waiters.empty()) {
                l.held = false;
                return;
            }
            next = l.waiters.front();
            l.waiters.pop_front();
        }
        defer([this, iri, next] { resume(iri, next.first, next.second); });
    }

    void defer(std::function<void()> f) {
        {
            std::lock_guard lock(sched_mu);
            deferred.push_back(std::move(f));
        }
        sched_cv.notify_all();
    }

    void run_deferred() {
        for (;;) {
            std::function<void()> f;
            {
                std::lock_guard lock(sched_mu);
                if (deferred.empty()) return;
                f = std::move(deferred.front());
                deferred.pop_front();
            }
            f();
        }
    }

    void after_stimulus() {
        if (!opt.autonomous) run_deferred();
    }

    void schedule_loop(std::stop_token st) {
        std::unique_lock lock(sched_mu);
        while (!st.stop_requested()) {
            if (!deferred.empty()) {
                auto f = std::move(deferred.front());
                deferred.pop_front();
                lock.unlock();
                guarded(f);
                lock.lock();
                continue;
            }
            auto earliest = std::min_element(timers.begin(), timers.end(),
                                             [](const Timer& a, const Timer& b) { return a.at < b.at; });
            if (earliest != timers.end() && earliest->at <= Clock::now()) {
                Timer t = *earliest;
                timers.erase(earliest);
                lock.unlock();
                guarded([&] { expire_timer(t.instance, t.activation); });
                lock.lock();
                continue;
            }
            std::size_t timer_count = timers.size();
            auto pred = [&] { return !deferred.empty() || timers.size() != timer_count; };
            if (earliest != timers.end())
                sched_cv.wait_until(lock, st, earliest->at, pred);
            else
                sched_cv.wait(lock, st, pred);
        }
    }

    static void guarded(const std::function<void()>& f) {
        try {
            f();
        } catch (const std::exception& e) {
            log_warning(std::string("background step failed: ") + e.what());
        }
    }

    // --- connector helpers -----------------------------------------------------

    void issue(const Skill& skill, TransitionCommand cmd) {
        try {
            connector->invoke(skill, cmd);
        } catch (const std::exception& e) {
            log_warning("cannot issue " + std::string(to_string(cmd)) + " to " + skill.iri + ": " + e.what());
        }
    }

    // Brings a skill left in a non-idle waiting state back to Idle.
    void ensure_idle(const Skill& skill) {
        auto deadline = Clock::now() + opt.prepare_timeout;
        for (;;) {
            SkillStatus st = connector->status(skill);
            switch (st.state) {
            case SkillState::Idle: return;
            case SkillState::Complete:
            case SkillState::Stopped: connector->invoke(skill, TransitionCommand::Reset); break;
            case SkillState::Aborted: connector->invoke(skill, TransitionCommand::Clear); break;
            default: break;
            }
            if (Clock::now() >= deadline)
                throw Error(ErrorCode::TransportError, "skill " + skill.iri + " did not return to Idle", skill.iri);
            connector->poll_events(skill, connector->status(skill).seq, std::chrono::milliseconds(50));
        }
    }

    // --- stepping ----------------------------------------------------------------

    void run(Instance& inst, Queue& queue) {
        while (!queue.empty() && !is_ended(inst.status)) {
            Arrival a = std::move(queue.front());
            queue.pop_front();
            arrive(inst, a, queue);
        }
        settle(inst);
    }

    void settle(Instance& inst) {
        if (is_ended(inst.status)) return;
        bool joins_empty = std::all_of(inst.arrivals.begin(), inst.arrivals.end(), [](const auto& kv) {
            return std::all_of(kv.second.begin(), kv.second.end(), [](const auto& c) { return c.second == 0; });
        });
        if (inst.activations.empty() && joins_empty) {
            inst.status = InstanceStatus::Completed;
            append(inst, EventKind::InstanceEnded, "", {{"status", to_string(inst.status)}});
            return;
        }
        bool waiting_user = std::any_of(inst.activations.begin(), inst.activations.end(),
                                        [](const auto& kv) { return kv.second.wait == Wait::User; });
        inst.status = waiting_user ? InstanceStatus::WaitingUser : InstanceStatus::Running;
    }

    Activation& open_activation(Instance& inst, const FlowNode& n, Wait wait) {
        Activation a;
        a.id = inst.next_activation++;
        a.node = n.id;
        a.wait = wait;
        a.created_at_ms = now_ms();
        return inst.activations.emplace(a.id, std::move(a)).first->second;
    }

    void arrive(Instance& inst, const Arrival& a, Queue& queue) {
        const FlowNode* n = inst.def.find_node(a.node);
        if (!n) return;
        json entered{{"type", node_type(*n)}};
        if (!a.flow.empty()) entered["flow"] = a.flow;

        if (n->is<ParallelGateway>() && inst.def.incoming(n->id).size() > 1) {
            append(inst, EventKind::NodeEntered, n->id, entered);
            auto& counts = inst.arrivals[n->id];
            ++counts[a.flow];
            auto incoming = inst.def.incoming(n->id);
            bool ready = std::all_of(incoming.begin(), incoming.end(),
                                     [&](const SequenceFlow* f) { return counts[f->id] > 0; });
            if (!ready) return;
            json consumed = json::array();
            for (const auto* f : incoming) {
                --counts[f->id];
                consumed.push_back(f->id);
            }
            std::erase_if(counts, [](const auto& kv) { return kv.second == 0; });
            if (counts.empty()) inst.arrivals.erase(n->id);
            complete_node(inst, *n, {{"consumed", consumed}});
            emit(inst, n->id, queue);
            return;
        }

        append(inst, EventKind::NodeEntered, n->id, entered);
        if (n->is<StartEvent>() || n->is<ParallelGateway>() || n->is<BoundaryErrorEvent>()) {
            complete_node(inst, *n);
            emit(inst, n->id, queue);
        } else if (n->is<EndEvent>()) {
            complete_node(inst, *n);
        } else if (const auto* xg = n->as<ExclusiveGateway>()) {
            step_exclusive(inst, *n, *xg, queue);
        } else if (const auto* send = n->as<SendTask>()) {
            step_send(inst, *n, *send, queue);
        } else if (n->is<UserTask>()) {
            open_activation(inst, *n, Wait::User);
        } else if (n->is<CapabilityTask>()) {
            Activation& act = open_activation(inst, *n, Wait::SkillAvailable);
            begin_delegation(inst, act, queue);
        } else if (const auto* timer = n->as<TimerCatchEvent>()) {
            Activation& act = open_activation(inst, *n, Wait::Timer);
            if (opt.autonomous) {
                {
                    std::lock_guard lock(sched_mu);
                    timers.push_back({Clock::now() + timer->duration, inst.id, act.id});
                }
                sched_cv.notify_all();
            }
        }
    }

    void step_exclusive(Instance& inst, const FlowNode& n, const ExclusiveGateway& xg, Queue& queue) {
        const SequenceFlow* chosen = nullptr;
        for (const auto* f : inst.def.outgoing(n.id)) {
            if (xg.default_flow && f->id == *xg.default_flow) continue;
            if (!f->condition) {
                chosen = f;
                break;
            }
            try {
                Value v = f->condition->evaluate(inst.vars);
                if (v.type() != Datatype::Boolean)
                    throw Error(ErrorCode::TypeError, "condition of " + f->id + " is not boolean", f->id);
                if (v.as_boolean()) {
                    chosen = f;
                    break;
                }
            } catch (const Error& e) {
                throw_error(inst, n.id, fault_from(e), queue, std::nullopt);
                return;
            }
        }
        if (!chosen && xg.default_flow) chosen = inst.def.find_flow(*xg.default_flow);
        if (!chosen) {
            throw_error(inst, n.id, {std::string(errors::kNoFlowEnabled), "no outgoing flow of " + n.id + " is enabled"},
                        queue, std::nullopt);
            return;
        }
        complete_node(inst, n, {{"flow", chosen->id}});
        queue.push_back({chosen->target, chosen->id});
    }

    void step_send(Instance& inst, const FlowNode& n, const SendTask& send, Queue& queue) {
        NotificationRecord rec;
        try {
            rec.subject = render_template(send.subject, inst.vars);
            rec.body = render_template(send.body, inst.vars);
        } catch (const Error& e) {
            throw_error(inst, n.id, fault_from(e), queue, std::nullopt);
            return;
        }
        rec.instance_id = inst.id;
        rec.task_id = n.id;
        rec.timestamp_ms = now_ms();
        {
            std::lock_guard lock(notif_mu);
            notifs.push_back(rec);
        }
        if (sink) {
            try {
                sink->deliver(rec);
            } catch (const std::exception& e) {
                log_warning(std::string("notification delivery failed: ") + e.what());
            }
        }
        complete_node(inst, n, {{"subject", rec.subject}});
        emit(inst, n.id, queue);
    }

    // --- delegation ----------------------------------------------------------------

    void begin_delegation(Instance& inst, Activation& act, Queue& queue) {
        const TaskBinding& binding = inst.plan.bindings.at(act.node);
        const Skill& skill = inst.skills.at(binding.skill_iri);
        VariableMap params;
        for (const auto& [name, expr] : binding.parameters) {
            Value v;
            try {
                v = expr.evaluate(inst.vars);
            } catch (const Error& e) {
                throw_error(inst, act.node, fault_from(e), queue, act.id);
                return;
            }
            const SkillVariable* decl = skill.find_parameter(name);
            if (decl) {
                if (!conforms(v, decl->datatype)) {
                    throw_error(inst, act.node,
                                {std::string(errors::kParameterConstraint),
                                 "value " + display(v) + " for " + name + " is not " +
                                     std::string(to_string(decl->datatype))},
                                queue, act.id);
                    return;
                }
                v = coerce(v, decl->datatype);
            }
            auto prop = inst.linked.find({skill.iri, name});
            if (prop != inst.linked.end()) {
                auto r = check_constraint(prop->second, v);
                if (!r.satisfied) {
                    throw_error(inst, act.node,
                                {std::string(errors::kParameterConstraint),
                                 "property " + prop->second.iri + ": value " + display(v) + " violates " + r.bound},
                                queue, act.id);
                    return;
                }
            }
            params.emplace(name, std::move(v));
        }
        act.parameters = std::move(params);
        if (!acquire_skill(skill.iri, inst.id, act.id)) return; // resumed on handoff
        dispatch(inst, act, queue);
    }

    // Skill lock is held by `act` on entry.
    void dispatch(Instance& inst, Activation& act, Queue& queue) {
        const Skill& skill = inst.skills.at(inst.plan.bindings.at(act.node).skill_iri);
        std::uint64_t cursor = 0;
        try {
            ensure_idle(skill);
            cursor = connector->status(skill).seq;
            connector->set_parameters(skill, act.parameters);
            connector->invoke(skill, TransitionCommand::Start);
        } catch (const Error& e) {
            release_skill(skill.iri);
            bool rejected = e.code() == ErrorCode::DatatypeMismatch || e.code() == ErrorCode::UnknownParameter;
            throw_error(inst, act.node,
                        {std::string(rejected ? errors::kParameterConstraint : errors::kSkillUnreachable), e.what()},
                        queue, act.id);
            return;
        }
        inst.delegations.push_back({act.node, skill.iri, TransitionCommand::Start, act.parameters});
        auto session = std::make_shared<Session>();
        session->instance_id = inst.id;
        session->activation_id = act.id;
        session->task_id = act.node;
        session->skill = skill;
        session->cursor = cursor;
        act.wait = Wait::Skill;
        act.session = session;
        if (opt.autonomous) start_monitor(session);
    }

    void resume(const std::string& skill_iri, const std::string& instance_id, std::uint64_t activation_id) {
        std::shared_ptr<Instance> inst;
        try {
            inst = find(instance_id);
        } catch (const Error&) {
            release_skill(skill_iri);
            return;
        }
        std::lock_guard lock(inst->mu);
        auto it = inst->activations.find(activation_id);
        if (is_ended(inst->status) || it == inst->activations.end() || it->second.wait != Wait::SkillAvailable) {
            release_skill(skill_iri);
            return;
        }
        Queue queue;
        dispatch(*inst, it->second, queue);
        run(*inst, queue);
    }

    // Stops tracking the skill on behalf of the task. The monitor keeps
    // driving the skill back to Idle before releasing it.
    void detach(Activation& act) {
        if (!act.session) return;
        auto session = std::move(act.session);
        session->attached = false;
        if (!opt.autonomous) {
            session->done = true;
            release_skill(session->skill.iri);
        }
    }

    void cancel_activation(Instance& inst, std::uint64_t id) {
        auto it = inst.activations.find(id);
        if (it == inst.activations.end()) return;
        Activation& act = it->second;
        if (act.session) {
            Skill skill = act.session->skill;
            SkillState last = inst.last_state.count(act.node) ? inst.last_state[act.node] : SkillState::Starting;
            detach(act);
            if (last != SkillState::Aborting && last != SkillState::Aborted) issue(skill, TransitionCommand::Abort);
        }
        inst.activations.erase(it);
    }

    void throw_error(Instance& inst, std::string node, const Fault& fault, Queue& queue,
                     std::optional<std::uint64_t> host_activation) {
        append(inst, EventKind::ErrorThrown, node, {{"code", fault.code}, {"message", fault.message}});
        const FlowNode* catcher = nullptr;
        for (const auto* b : inst.def.boundaries_of(node)) {
            const auto& filter = b->as<BoundaryErrorEvent>()->error_code;
            if (filter && *filter == fault.code) {
                catcher = b;
                break;
            }
            if (!filter && !catcher) catcher = b;
        }
        if (!catcher) {
            fault_instance(inst, fault);
            queue.clear();
            return;
        }
        if (host_activation) cancel_activation(inst, *host_activation);
        append(inst, EventKind::NodeEntered, catcher->id, {{"type", node_type(*catcher)}});
        append(inst, EventKind::ErrorCaught, catcher->id, {{"code", fault.code}, {"host", node}});
        complete_node(inst, *catcher);
        emit(inst, catcher->id, queue);
    }

    void end_instance(Instance& inst, InstanceStatus status, json payload) {
        std::vector<std::uint64_t> ids;
        for (const auto& [id, a] : inst.activations) ids.push_back(id);
        for (auto id : ids) cancel_activation(inst, id);
        inst.arrivals.clear();
        inst.status = status;
        payload["status"] = to_string(status);
        append(inst, EventKind::InstanceEnded, "", std::move(payload));
    }

    void fault_instance(Instance& inst, const Fault& fault) {
        end_instance(inst, InstanceStatus::Faulted, {{"error", fault.code}});
    }

    // --- skill events ---------------------------------------------------------------

    void attached_event(Instance& inst, Activation& act, SkillState state, std::optional<VariableMap> outputs,
                        std::uint64_t seq, Queue& queue) {
        Skill skill = act.session->skill;
        json payload{{"skill", skill.iri}, {"state", to_string(state)}};
        if (seq) payload["seq"] = seq;
        inst.last_state[act.node] = state;
        switch (state) {
        case SkillState::Complete: {
            VariableMap outs;
            if (outputs) {
                outs = std::move(*outputs);
            } else {
                try {
                    outs = connector->status(skill).outputs;
                } catch (const Error& e) {
                    append(inst, EventKind::SkillStateObserved, act.node, payload);
                    detach(act);
                    throw_error(inst, act.node, {std::string(errors::kSkillUnreachable), e.what()}, queue, act.id);
                    return;
                }
            }
            payload["outputs"] = to_json(outs);
            payload["command"] = "Reset";
            append(inst, EventKind::SkillStateObserved, act.node, payload);
            detach(act);
            issue(skill, TransitionCommand::Reset);
            const TaskBinding& binding = inst.plan.bindings.at(act.node);
            for (const auto& [result, variable] : binding.outputs) {
                auto it = outs.find(result);
                if (it == outs.end()) {
                    inst.diagnostics.push_back({DiagnosticKind::MissingOutput, act.node,
                                                "skill " + skill.iri + " completed without result " + result});
                    continue;
                }
                Value v = it->second;
                if (const auto* decl = skill.find_result(result); decl && conforms(v, decl->datatype))
                    v = coerce(v, decl->datatype);
                set_var(inst, act.node, variable, v);
            }
            std::string node = act.node;
            inst.activations.erase(act.id);
            complete_node(inst, *inst.def.find_node(node));
            emit(inst, node, queue);
            return;
        }
        case SkillState::Stopped:
            payload["command"] = "Reset";
            append(inst, EventKind::SkillStateObserved, act.node, payload);
            detach(act);
            issue(skill, TransitionCommand::Reset);
            throw_error(inst, act.node, {std::string(errors::kSkillStopped), "skill " + skill.iri + " stopped"}, queue,
                        act.id);
            return;
        case SkillState::Aborted:
            payload["command"] = "Clear";
            append(inst, EventKind::SkillStateObserved, act.node, payload);
            detach(act);
            issue(skill, TransitionCommand::Clear);
            throw_error(inst, act.node, {std::string(errors::kSkillAborted), "skill " + skill.iri + " aborted"}, queue,
                        act.id);
            return;
        default: append(inst, EventKind::SkillStateObserved, act.node, payload); return;
        }
    }

    void detached_event(Session& session, SkillState state) {
        switch (state) {
        case SkillState::Aborted: issue(session.skill, TransitionCommand::Clear); break;
        case SkillState::Stopped:
        case SkillState::Complete: issue(session.skill, TransitionCommand::Reset); break;
        case SkillState::Idle:
            session.done = true;
            release_skill(session.skill.iri);
            break;
        default: break;
        }
    }

    void deliver(const std::shared_ptr<Session>& session, const StateEvent& event) {
        std::shared_ptr<Instance> inst = find(session->instance_id);
        {
            std::lock_guard lock(inst->mu);
            if (session->attached) {
                auto it = inst->activations.find(session->activation_id);
                if (it != inst->activations.end() && it->second.session == session) {
                    Queue queue;
                    attached_event(*inst, it->second, event.state, std::nullopt, event.seq, queue);
                    run(*inst, queue);
                    return;
                }
                session->attached = false;
            }
        }
        detached_event(*session, event.state);
    }

    void start_monitor(const std::shared_ptr<Session>& session) {
        std::lock_guard lock(monitors_mu);
        for (auto it = monitors.begin(); it != monitors.end();) {
            if (it->first->done) {
                it->second.join();
                it = monitors.erase(it);
            } else {
                ++it;
            }
        }
        monitors.emplace_back(session, std::jthread([this, session](std::stop_token st) { monitor(st, session); }));
    }

    void monitor(std::stop_token st, std::shared_ptr<Session> session) {
        int failures = 0;
        while (!st.stop_requested() && !session->done) {
            std::vector<StateEvent> events;
            try {
                events = connector->poll_events(session->skill, session->cursor, opt.poll_timeout);
                failures = 0;
            } catch (const std::exception& e) {
                if (++failures >= 20) {
                    unreachable(session, e.what());
                    break;
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(100));
                continue;
            }
            for (const auto& e : events) {
                if (e.seq <= session->cursor) continue;
                session->cursor = e.seq;
                guarded([&] { deliver(session, e); });
                if (session->done) break;
            }
        }
    }

    void unreachable(const std::shared_ptr<Session>& session, const std::string& message) {
        try {
            auto inst = find(session->instance_id);
            std::lock_guard lock(inst->mu);
            auto it = inst->activations.find(session->activation_id);
            if (session->attached && it != inst->activations.end() && it->second.session == session) {
                Queue queue;
                detach(it->second);
                throw_error(*inst, session->task_id, {std::string(errors::kSkillUnreachable), message}, queue,
                            session->activation_id);
                run(*inst, queue);
            }
        } catch (const std::exception& e) {
            log_warning(e.what());
        }
        session->attached = false;
        session->done = true;
        release_skill(session->skill.iri);
    }

    // --- timers ------------------------------------------------------------------------

    void expire_timer(const std::string& instance_id, std::uint64_t activation_id) {
        auto inst = find(instance_id);
        std::lock_guard lock(inst->mu);
        auto it = inst->activations.find(activation_id);
        if (is_ended(inst->status) || it == inst->activations.end() || it->second.wait != Wait::Timer) return;
        std::string node = it->second.node;
        inst->activations.erase(it);
        Queue queue;
        complete_node(*inst, *inst->def.find_node(node));
        emit(*inst, node, queue);
        run(*inst, queue);
    }

    // --- views ---------------------------------------------------------------------------

    InstanceView view(const Instance& inst, std::uint64_t since) const {
        InstanceView v;
        v.instance_id = inst.id;
        v.definition_id = inst.def.id;
        v.status = inst.status;
        for (const auto& [id, a] : inst.activations) {
            v.tokens.push_back(a.node);
            if (a.wait == Wait::User) {
                const auto* ut = inst.def.find_node(a.node)->as<UserTask>();
                v.work_items.push_back({inst.id, a.node, ut->fields, a.created_at_ms});
            }
        }
        v.join_arrivals = inst.arrivals;
        v.variables = inst.vars;
        v.last_skill_state = inst.last_state;
        v.delegations = inst.delegations;
        v.diagnostics = inst.diagnostics;
        if (since < inst.history.size())
            v.history.assign(inst.history.begin() + static_cast<std::ptrdiff_t>(since), inst.history.end());
        v.last_seq = inst.history.size();
        return v;
    }
};

Engine::Engine(std::shared_ptr<SkillConnector> connector, std::shared_ptr<NotificationSink> sink,
               EngineOptions options)
    : impl_(std::make_unique<Impl>(std::move(connector), std::move(sink), std::move(options))) {}

Engine::~Engine() = default;

std::string Engine::start_instance(const ProcessDefinition& definition, const BindingPlan& plan,
                                   const Registry& registry, const VariableMap& initial, std::string instance_id) {
    auto diags = validate_plan(plan, definition, registry);
    for (const auto& d : diags)
        if (d.kind == DiagnosticKind::PlanMismatch) throw Error(ErrorCode::PlanMismatch, d.message, d.element);
    auto process_diags = validate_process(definition, &registry);
    diags.insert(diags.end(), process_diags.begin(), process_diags.end());
    if (!diags.empty())
        throw Error(ErrorCode::ValidationFailed, diags.front().element + ": " + diags.front().message,
                    diags.front().element);

    auto inst = std::make_shared<Instance>();
    inst->def = definition;
    inst->plan = plan;
    for (const auto& [task, b] : plan.bindings) {
        const Skill& skill = *registry.find_skill(b.skill_iri);
        inst->skills.emplace(skill.iri, skill);
        const Capability* cap = registry.find_capability(skill.capability_iri);
        for (const auto& p : skill.parameters)
            if (p.linked_property && cap)
                if (const auto* prop = cap->find_input(*p.linked_property))
                    inst->linked.emplace(std::pair{skill.iri, p.name}, *prop);
    }
    {
        std::lock_guard lock(impl_->instances_mu);
        if (instance_id.empty()) instance_id = definition.id + "-" + std::to_string(++impl_->instance_counter);
        if (impl_->instances.count(instance_id))
            throw Error(ErrorCode::ValidationFailed, "instance id in use: " + instance_id, instance_id);
        inst->id = instance_id;
        impl_->instances.emplace(instance_id, inst);
    }
    {
        std::lock_guard lock(inst->mu);
        for (const auto& [name, value] : initial) impl_->set_var(*inst, "", name, value);
        Queue queue{{definition.start_event()->id, ""}};
        impl_->run(*inst, queue);
    }
    impl_->after_stimulus();
    return instance_id;
}

void Engine::complete_user_task(std::string_view instance_id, std::string_view task_id, const VariableMap& values) {
    auto inst = impl_->find(instance_id);
    {
        std::lock_guard lock(inst->mu);
        auto it = std::find_if(inst->activations.begin(), inst->activations.end(), [&](const auto& kv) {
            return kv.second.node == task_id && kv.second.wait == Wait::User;
        });
        if (is_ended(inst->status) || it == inst->activations.end())
            throw Error(ErrorCode::NoOpenWorkItem, "no open work item for " + std::string(task_id),
                        std::string(task_id));
        const FlowNode& n = *inst->def.find_node(task_id);
        const auto& fields = n.as<UserTask>()->fields;
        VariableMap accepted;
        for (const auto& f : fields) {
            auto v = values.find(f.name);
            if (v == values.end())
                throw Error(ErrorCode::MissingField, "missing field " + f.name, f.name);
            if (!conforms(v->second, f.datatype))
                throw Error(ErrorCode::DatatypeMismatch,
                            "field " + f.name + " expects " + std::string(to_string(f.datatype)), f.name);
            accepted.emplace(f.name, coerce(v->second, f.datatype));
        }
        inst->activations.erase(it);
        for (const auto& [name, value] : accepted) impl_->set_var(*inst, n.id, n.id + "_" + name, value);
        Queue queue;
        impl_->complete_node(*inst, n, {{"values", to_json(accepted)}});
        impl_->emit(*inst, n.id, queue);
        impl_->run(*inst, queue);
    }
    impl_->after_stimulus();
}

void Engine::handle_skill_event(std::string_view instance_id, std::string_view task_id, SkillState observed,
                                std::optional<VariableMap> outputs) {
    auto inst = impl_->find(instance_id);
    {
        std::lock_guard lock(inst->mu);
        auto it = std::find_if(inst->activations.begin(), inst->activations.end(), [&](const auto& kv) {
            return kv.second.node == task_id && kv.second.wait == Wait::Skill && kv.second.session;
        });
        if (it == inst->activations.end())
            throw Error(ErrorCode::NotFound, "task " + std::string(task_id) + " is not waiting on a skill",
                        std::string(task_id));
        Queue queue;
        impl_->attached_event(*inst, it->second, observed, std::move(outputs), 0, queue);
        impl_->run(*inst, queue);
    }
    impl_->after_stimulus();
}

void Engine::fire_timer(std::string_view instance_id, std::string_view node) {
    auto inst = impl_->find(instance_id);
    std::uint64_t id = 0;
    {
        std::lock_guard lock(inst->mu);
        for (const auto& [aid, a] : inst->activations)
            if (a.node == node && a.wait == Wait::Timer) {
                id = aid;
                break;
            }
    }
    if (!id) throw Error(ErrorCode::NotFound, "no pending timer at " + std::string(node), std::string(node));
    impl_->expire_timer(inst->id, id);
    impl_->after_stimulus();
}

void Engine::cancel_instance(std::string_view instance_id) {
    auto inst = impl_->find(instance_id);
    {
        std::lock_guard lock(inst->mu);
        if (is_ended(inst->status))
            throw Error(ErrorCode::AlreadyEnded, "instance already " + std::string(to_string(inst->status)),
                        std::string(instance_id));
        impl_->end_instance(*inst, InstanceStatus::Cancelled, json::object());
    }
    impl_->after_stimulus();
}

InstanceView Engine::snapshot(std::string_view instance_id, std::uint64_t since) const {
    auto inst = impl_->find(instance_id);
    std::lock_guard lock(inst->mu);
    return impl_->view(*inst, since);
}

std::vector<EngineEvent> Engine::events_since(std::string_view instance_id, std::uint64_t since,
                                              std::chrono::milliseconds timeout) const {
    auto inst = impl_->find(instance_id);
    std::unique_lock lock(inst->mu);
    inst->cv.wait_for(lock, timeout, [&] { return inst->history.size() > since; });
    if (since >= inst->history.size()) return {};
    return {inst->history.begin() + static_cast<std::ptrdiff_t>(since), inst->history.end()};
}

bool Engine::wait_for(std::string_view instance_id, const std::function<bool(const InstanceView&)>& pred,
                      std::chrono::milliseconds timeout) const {
    auto inst = impl_->find(instance_id);
    auto deadline = Clock::now() + timeout;
    std::unique_lock lock(inst->mu);
    for (;;) {
        if (pred(impl_->view(*inst, inst->history.size()))) return true;
        if (inst->cv.wait_until(lock, deadline) == std::cv_status::timeout)
            return pred(impl_->view(*inst, inst->history.size()));
    }
}

std::vector<std::string> Engine::instance_ids() const {
    std::lock_guard lock(impl_->instances_mu);
    std::vector<std::string> out;
    for (const auto& [id, i] : impl_->instances) out.push_back(id);
    return out;
}

std::vector<NotificationRecord> Engine::notifications() const {
    std::lock_guard lock(impl_->notif_mu);
    return impl_->notifs;
}

void Engine::run_deferred() { impl_->run_deferred(); }

namespace {

// Accepts every command and reports an idle skill; replay feeds recorded
// observations instead of live ones.
class ReplayConnector : public SkillConnector {
public:
    void set_parameters(const Skill&, const VariableMap&) override {}
    SkillState invoke(const Skill&, TransitionCommand command) override {
        switch (command) {
        case TransitionCommand::Start: return SkillState::Starting;
        case TransitionCommand::Stop: return SkillState::Stopping;
        case TransitionCommand::Abort: return SkillState::Aborting;
        case TransitionCommand::Clear: return SkillState::Clearing;
        case TransitionCommand::Reset: return SkillState::Resetting;
        }
        return SkillState::Starting;
    }
    SkillStatus status(const Skill&) override { return {}; }
    std::vector<StateEvent> poll_events(const Skill&, std::uint64_t, std::chrono::milliseconds) override {
        return {};
    }
};

} // namespace

InstanceView replay_instance(const ProcessDefinition& definition, const BindingPlan& plan, const Registry& registry,
                             const std::vector<EngineEvent>& history) {
    EngineOptions options;
    options.autonomous = false;
    Engine engine(std::make_shared<ReplayConnector>(), nullptr, options);
    VariableMap initial;
    for (const auto& e : history)
        if (e.kind == EventKind::VariableSet && e.node.empty())
            initial.insert_or_assign(e.payload.at("name").get<std::string>(), value_from_json(e.payload.at("value")));
    std::string id = engine.start_instance(definition, plan, registry, initial, "replay");
    for (const auto& e : history) {
        const FlowNode* n = definition.find_node(e.node);
        if (e.kind == EventKind::NodeCompleted && n && n->is<UserTask>()) {
            engine.complete_user_task(id, e.node, variables_from_json(e.payload.at("values")));
        } else if (e.kind == EventKind::NodeCompleted && n && n->is<TimerCatchEvent>()) {
            engine.fire_timer(id, e.node);
        } else if (e.kind == EventKind::SkillStateObserved) {
            auto state = parse_skill_state(e.payload.at("state").get<std::string>());
            if (!state) throw Error(ErrorCode::ParseError, "unknown skill state in history");
            std::optional<VariableMap> outputs;
            if (e.payload.contains("outputs")) outputs = variables_from_json(e.payload.at("outputs"));
            engine.handle_skill_event(id, e.node, *state, std::move(outputs));
        } else if (e.kind == EventKind::InstanceEnded && e.payload.value("status", "") == "Cancelled") {
            engine.cancel_instance(id);
        }
    }
    return engine.snapshot(id);
}

} // namespace skillflow
