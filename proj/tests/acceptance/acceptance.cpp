// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <chrono>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "expr_reference.hpp"
#include "gateway_reference.hpp"
#include "httplib.h"
#include "skillflow/error.hpp"
#include "skillflow/http_connector.hpp"
#include "skillflow/plant_http.hpp"
#include "skillflow/service.hpp"
#include "skillflow/service_http.hpp"
#include "support.hpp"

using namespace skillflow;
using namespace std::chrono_literals;
using nlohmann::json;
using testsupport::read_fixture;
using Clock = std::chrono::steady_clock;

namespace {

/// Collects failed expectations for one criterion.
class Verdict {
public:
    void expect(bool ok, const std::string& what) {
        if (!ok) failures_.push_back(what);
    }
    bool passed() const { return failures_.empty(); }
    std::string summary() const {
        std::string out;
        for (const auto& f : failures_) out += (out.empty() ? "" : "; ") + f;
        return out;
    }

private:
    std::vector<std::string> failures_;
};

// Legal command transitions and auto-advance rows written out independently
// of the library.
using S = SkillState;
using C = TransitionCommand;
const std::map<std::pair<S, C>, S> kTable = {
    {{S::Idle, C::Start}, S::Starting},      {{S::Idle, C::Stop}, S::Stopping},
    {{S::Starting, C::Stop}, S::Stopping},   {{S::Execute, C::Stop}, S::Stopping},
    {{S::Completing, C::Stop}, S::Stopping}, {{S::Complete, C::Stop}, S::Stopping},
    {{S::Resetting, C::Stop}, S::Stopping},  {{S::Idle, C::Abort}, S::Aborting},
    {{S::Starting, C::Abort}, S::Aborting},  {{S::Execute, C::Abort}, S::Aborting},
    {{S::Completing, C::Abort}, S::Aborting}, {{S::Complete, C::Abort}, S::Aborting},
    {{S::Resetting, C::Abort}, S::Aborting}, {{S::Stopping, C::Abort}, S::Aborting},
    {{S::Stopped, C::Abort}, S::Aborting},   {{S::Clearing, C::Abort}, S::Aborting},
    {{S::Aborted, C::Clear}, S::Clearing},   {{S::Complete, C::Reset}, S::Resetting},
    {{S::Stopped, C::Reset}, S::Resetting},
};
const std::map<S, S> kAutoAdvance = {
    {S::Starting, S::Execute}, {S::Execute, S::Completing}, {S::Completing, S::Complete},
    {S::Resetting, S::Idle},   {S::Stopping, S::Stopped},   {S::Clearing, S::Stopped},
    {S::Aborting, S::Aborted},
};

bool one_step(S from, S to) {
    if (auto it = kAutoAdvance.find(from); it != kAutoAdvance.end() && it->second == to) return true;
    for (const auto& [key, target] : kTable)
        if (key.first == from && target == to) return true;
    return false;
}

/// A module's full event log must start from Idle, advance one legal step at
/// a time and carry gapless sequence numbers.
bool legal_log(const std::vector<StateEvent>& events) {
    S cur = S::Idle;
    std::uint64_t seq = 0;
    for (const auto& e : events) {
        if (e.seq != seq + 1 || !one_step(cur, e.state)) return false;
        cur = e.state;
        seq = e.seq;
    }
    return true;
}

std::filesystem::path fresh_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() /
               ("skillflow-acceptance-" + std::to_string(::getpid()) + "-" + tag);
    std::filesystem::remove_all(dir);
    return dir;
}

/// A service over HTTP talking to virtual modules over HTTP.
struct Env {
    std::filesystem::path dir;
    std::map<std::string, ModuleHandle> modules; // machine iri -> handle
    std::unique_ptr<Service> service;
    std::unique_ptr<ServiceHttpServer> server;
    std::unique_ptr<httplib::Client> client;

    explicit Env(const std::string& tag) : dir(fresh_dir(tag)) {
        for (const char* plant : {"festo_plant.json", "drill2_plant.json"})
            for (auto cfg : load_plant_config(read_fixture(plant))) {
                cfg.port = 0;
                std::string iri = cfg.machine.iri;
                modules.emplace(iri, spawn_module(std::move(cfg), true));
            }
        ServiceConfig cfg;
        cfg.data_dir = dir.string();
        cfg.notification_sink = "memory";
        service = std::make_unique<Service>(cfg, std::make_shared<FileStorage>(dir),
                                            std::make_shared<HttpConnector>());
        server = std::make_unique<ServiceHttpServer>(*service, "127.0.0.1", 0);
        server->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", server->port());
        client->set_read_timeout(15, 0);
        for (int i = 0; i < 100 && !client->Get("/processes"); ++i) std::this_thread::sleep_for(20ms);
    }
    ~Env() {
        server->stop();
        for (auto& [iri, h] : modules) h.server->stop();
        std::filesystem::remove_all(dir);
    }

    VirtualModule& module(const std::string& iri) { return *modules.at(iri).module; }

    httplib::Result post(const std::string& path, const json& body) {
        return client->Post(path, body.dump(), "application/json");
    }
    json ok_json(const httplib::Result& res, int status) {
        if (!res) throw std::runtime_error("no response");
        if (res->status != status)
            throw std::runtime_error("HTTP " + std::to_string(res->status) + ": " + res->body);
        return res->body.empty() ? json() : json::parse(res->body);
    }
    json get(const std::string& path) { return ok_json(client->Get(path), 200); }

    void add_capabilities() {
        Registry r = testsupport::festo_registry();
        for (const auto& [iri, c] : r.capabilities()) ok_json(post("/registry/capabilities", to_json(c)), 201);
    }
    void register_machine(const std::string& iri) {
        ok_json(post("/registry/machines", to_json(modules.at(iri).descriptor())), 201);
    }
    void register_festo() {
        add_capabilities();
        for (const char* m : {"urn:skillflow:machine:supply", "urn:skillflow:machine:transport",
                              "urn:skillflow:machine:drill1"})
            register_machine(m);
    }
    std::string deploy(const std::string& xml) {
        return ok_json(client->Post("/processes", xml, "application/xml"), 201).at("definitionId");
    }
    std::string start(const std::string& session) {
        return ok_json(post("/instances", {{"sessionId", session}}), 201).at("instanceId");
    }
    void complete_order(const std::string& id, const json& values) {
        auto deadline = Clock::now() + 5s;
        while (get("/instances/" + id)["status"] != "WaitingUser" && Clock::now() < deadline)
            std::this_thread::sleep_for(10ms);
        ok_json(post("/instances/" + id + "/user-tasks/Activity_6k239cs/complete", values), 204);
    }
    /// Follows the event stream until the instance ends.
    std::vector<json> follow(const std::string& id, std::chrono::seconds limit = 10s) {
        std::vector<json> events;
        std::uint64_t cursor = 0;
        auto deadline = Clock::now() + limit;
        while (Clock::now() < deadline) {
            for (const auto& e : get("/instances/" + id + "/events?since=" + std::to_string(cursor) + "&timeoutMs=1000")) {
                events.push_back(e);
                cursor = e["seq"];
                if (e["kind"] == "InstanceEnded") return events;
            }
        }
        throw std::runtime_error("instance " + id + " did not end");
    }
};

std::vector<json> of_kind(const std::vector<json>& events, const std::string& kind) {
    std::vector<json> out;
    for (const auto& e : events)
        if (e["kind"] == kind) out.push_back(e);
    return out;
}

bool completed_node(const std::vector<json>& events, const std::string& node) {
    for (const auto& e : of_kind(events, "NodeCompleted"))
        if (e["node"] == node) return true;
    return false;
}

/// Observed states per task from the engine's history, each one legal step
/// from the previous observation or from the state the command entered.
bool legal_observations(const std::vector<json>& events) {
    std::map<std::string, S> last;
    for (const auto& e : of_kind(events, "SkillStateObserved")) {
        auto s = parse_skill_state(e["payload"]["state"].get<std::string>());
        if (!s) return false;
        std::string task = e["node"];
        auto it = last.find(task);
        if (it == last.end()) {
            if (*s != S::Starting && !one_step(S::Starting, *s)) return false;
        } else if (!one_step(it->second, *s)) {
            return false;
        }
        last[task] = *s;
    }
    return !last.empty();
}

std::vector<InvocationRecord> starts(VirtualModule& m, const std::string& skill) {
    std::vector<InvocationRecord> out;
    for (const auto& inv : m.invocations(skill))
        if (inv.command == C::Start) out.push_back(inv);
    return out;
}

const std::string kDrill1 = "urn:skillflow:machine:drill1";
const std::string kDrill2 = "urn:skillflow:machine:drill2";

void happy_path(Verdict& v) {
    auto t0 = Clock::now();
    Env env("c1");
    env.register_festo();
    auto def = env.deploy(read_fixture("thermometer.bpmn"));
    auto session = env.ok_json(env.post("/processes/" + def + "/resolutions", {{"policy", "AutoStrict"}}), 201);
    v.expect(session["complete"] == true, "auto resolution left decisions pending");
    auto id = env.start(session["sessionId"]);
    env.complete_order(id, {{"Color", "red"}, {"NoOfHoles", 3}});
    auto events = env.follow(id);
    auto elapsed = Clock::now() - t0;

    auto snap = env.get("/instances/" + id);
    v.expect(snap["status"] == "Completed", "status " + snap["status"].dump());
    v.expect(completed_node(events, "EndEvent_Done"), "normal end not reached");
    v.expect(!completed_node(events, "EndEvent_Failed"), "error end reached");
    auto drill = starts(env.module(kDrill1), "drill1-drilling");
    v.expect(drill.size() == 1 && drill[0].parameters.at("noOfHoles") == Value(3), "drill did not get noOfHoles=3");
    v.expect(env.get("/notifications").empty(), "notifications were sent");
    for (const auto& [iri, skill] : std::map<std::string, std::string>{{"urn:skillflow:machine:supply", "supply-part"},
                                                                       {"urn:skillflow:machine:transport", "transport"},
                                                                       {kDrill1, "drill1-drilling"}}) {
        auto& m = env.module(iri);
        // Reset goes out as the task completes; Resetting still has to elapse.
        auto deadline = Clock::now() + 2s;
        while (m.get_state(skill).state != S::Idle && Clock::now() < deadline)
            m.poll_events(skill, m.get_state(skill).seq, 50ms);
        auto log = m.events(skill);
        v.expect(legal_log(log), "illegal state sequence on " + skill);
        v.expect(!log.empty() && log.back().state == S::Idle, skill + " not back in Idle");
    }
    v.expect(legal_observations(events), "engine observed an illegal state sequence");
    v.expect(elapsed < 5s, "took " + std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count()) + " ms");
}

void error_path(Verdict& v) {
    auto t0 = Clock::now();
    Env env("c2");
    env.register_festo();
    httplib::Client plant("127.0.0.1", env.modules.at(kDrill1).server->port());
    auto inj = plant.Post("/skills/drill1-drilling/inject",
                          json{{"mode", "abort"}, {"phase", "duringExecute"}, {"oneShot", true}}.dump(),
                          "application/json");
    v.expect(inj && inj->status == 204, "injection rejected");
    auto def = env.deploy(read_fixture("thermometer.bpmn"));
    auto session = env.ok_json(env.post("/processes/" + def + "/resolutions", {{"policy", "AutoStrict"}}), 201);
    auto id = env.start(session["sessionId"]);
    env.complete_order(id, {{"Color", "red"}, {"NoOfHoles", 3}});
    auto events = env.follow(id);
    auto elapsed = Clock::now() - t0;

    auto thrown = of_kind(events, "ErrorThrown");
    v.expect(thrown.size() == 1 && thrown[0]["payload"]["code"] == "SkillAborted" && thrown[0]["node"] == "Task_Drilling",
             "expected one SkillAborted at the drilling task");
    auto caught = of_kind(events, "ErrorCaught");
    v.expect(caught.size() == 1 && caught[0]["node"] == "Boundary_Drilling", "boundary on drilling did not catch");
    auto notes = env.get("/notifications");
    v.expect(notes.size() == 1, std::to_string(notes.size()) + " notifications");
    v.expect(env.get("/instances/" + id)["status"] == "Completed", "instance not Completed");
    v.expect(completed_node(events, "EndEvent_Failed"), "alternative end not reached");
    v.expect(!completed_node(events, "EndEvent_Done"), "normal end reached");
    v.expect(elapsed < 5s, "too slow");
    // Recovery runs on after the instance ends: Clear, then Reset back to Idle.
    auto& drill = env.module(kDrill1);
    auto deadline = Clock::now() + 2s;
    while (drill.get_state("drill1-drilling").state != S::Idle && Clock::now() < deadline)
        drill.poll_events("drill1-drilling", drill.get_state("drill1-drilling").seq, 50ms);
    v.expect(drill.get_state("drill1-drilling").state == S::Idle, "drill not recovered to Idle");
    v.expect(legal_log(drill.events("drill1-drilling")), "illegal drill state sequence");
}

void module_swap(Verdict& v) {
    Env env("c3");
    env.register_festo();
    const std::string original = read_fixture("thermometer.bpmn");
    auto def = env.deploy(original);
    auto before = env.client->Get("/processes/" + def + "/xml");
    v.expect(before && before->body == original, "stored XML differs from upload");

    auto del = env.client->Delete("/registry/machines/" + kDrill1);
    v.expect(del && del->status == 204, "unregister drill1 failed");
    env.register_machine(kDrill2);

    auto after = env.client->Get("/processes/" + def + "/xml");
    v.expect(after && before && after->body == before->body, "XML changed across the swap");
    v.expect(env.get("/processes").size() == 1, "definition was redeployed");
    auto session = env.ok_json(env.post("/processes/" + def + "/resolutions", {{"policy", "AutoStrict"}}), 201);
    v.expect(session["plan"]["bindings"]["Task_Drilling"]["skill"] == "urn:skillflow:skill:drill2-drilling",
             "drilling not bound to drill2");
    auto id = env.start(session["sessionId"]);
    env.complete_order(id, {{"Color", "black"}, {"NoOfHoles", 3}});
    auto events = env.follow(id);
    auto snap = env.get("/instances/" + id);
    v.expect(snap["status"] == "Completed" && completed_node(events, "EndEvent_Done"), "run did not complete normally");
    auto drill2 = starts(env.module(kDrill2), "drill2-drilling");
    v.expect(drill2.size() == 1 && drill2[0].parameters.at("holes") == Value(3), "drill2 did not get holes=3");
    v.expect(starts(env.module(kDrill1), "drill1-drilling").empty(), "drill1 was used");
    // drill2 output program: holes * 0.25.
    v.expect(snap["variables"]["drillDuration"] == 3 * 0.25, "drillDuration " + snap["variables"]["drillDuration"].dump());
}

void ambiguity(Verdict& v) {
    Env env("c4");
    env.register_festo();
    env.register_machine(kDrill2);
    auto def = env.deploy(read_fixture("thermometer.bpmn"));
    auto session = env.ok_json(env.post("/processes/" + def + "/resolutions", {{"policy", "Interactive"}}), 201);
    auto pending = session["pendingDecisions"];
    v.expect(session["complete"] == false && pending.size() == 1, "expected one pending decision");
    if (pending.size() != 1) return;
    v.expect(pending[0]["taskId"] == "Task_Drilling", "pending decision is not the drilling task");
    v.expect(pending[0]["candidates"].size() == 2, "expected 2 candidates");
    std::string sid = session["sessionId"];
    auto decided = env.ok_json(env.post("/resolutions/" + sid + "/decisions",
                                        {{"taskId", "Task_Drilling"}, {"skill", "urn:skillflow:skill:drill2-drilling"}}),
                               200);
    v.expect(decided["complete"] == true, "plan incomplete after decide");
    auto log_before = env.module(kDrill2).events("drill2-drilling").size();
    auto id = env.start(sid);
    env.complete_order(id, {{"Color", "red"}, {"NoOfHoles", 2}});
    auto events = env.follow(id);
    v.expect(env.get("/instances/" + id)["status"] == "Completed" && completed_node(events, "EndEvent_Done"),
             "run did not complete normally");
    auto log = env.module(kDrill2).events("drill2-drilling");
    v.expect(log.size() > log_before && legal_log(log), "chosen module's event log shows no legal run");
    bool completed = false;
    for (const auto& e : log) completed = completed || e.state == S::Complete;
    v.expect(completed, "chosen module never reached Complete");
    v.expect(env.module(kDrill1).events("drill1-drilling").empty(), "the other drill was used");
}

void state_machine(Verdict& v) {
    auto t0 = Clock::now();
    int pairs = 0;
    for (S s : kAllStates)
        for (C c : kAllCommands) {
            ++pairs;
            auto it = kTable.find({s, c});
            auto got = try_apply(s, c);
            bool ok = it == kTable.end() ? !got.has_value() : (got && *got == it->second);
            v.expect(ok, std::string(to_string(s)) + "/" + std::string(to_string(c)));
        }
    v.expect(pairs == 55, "pair count");
    int rows = 0;
    for (S s : kAllStates) {
        auto it = kAutoAdvance.find(s);
        auto got = try_complete_acting(s);
        if (it != kAutoAdvance.end()) ++rows;
        v.expect(it == kAutoAdvance.end() ? !got.has_value() : (got && *got == it->second),
                 "auto-advance " + std::string(to_string(s)));
    }
    v.expect(rows == 7, "auto-advance row count");
    // Recovery liveness by breadth-first search over Abort, Clear, Reset and
    // auto-advance, using the implementation's transition functions.
    for (S start : kAllStates) {
        std::set<S> seen{start};
        std::deque<S> queue{start};
        bool reached = false;
        while (!queue.empty() && !reached) {
            S s = queue.front();
            queue.pop_front();
            reached = s == S::Idle;
            std::vector<S> next;
            for (C c : {C::Abort, C::Clear, C::Reset})
                if (auto n = try_apply(s, c)) next.push_back(*n);
            if (auto n = try_complete_acting(s)) next.push_back(*n);
            for (S n : next)
                if (seen.insert(n).second) queue.push_back(n);
        }
        v.expect(reached, "Idle unreachable from " + std::string(to_string(start)));
    }
    v.expect(Clock::now() - t0 < 1s, "too slow");
}

void round_trip(Verdict& v) {
    int fixtures = 0;
    for (const char* name :
         {"thermometer.bpmn", "minimal.bpmn", "gateway.bpmn", "parallel_timer.bpmn", "escaped_names.bpmn"}) {
        auto d = parse_process(read_fixture(name));
        std::string once = serialize_process(d);
        auto back = parse_process(once);
        v.expect(back == d, std::string(name) + ": parse(serialize) differs");
        v.expect(serialize_process(back) == once, std::string(name) + ": second serialization differs");
        v.expect(serialize_process(d) == once, std::string(name) + ": serialization not deterministic");
        ++fixtures;
    }
    v.expect(fixtures >= 5, "fewer than 5 fixtures");

    testsupport::Rng rng(6);
    const VariableMap vars{{"a", Value(3)}, {"b", Value(-4)}, {"flag", Value(true)}};
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        expr::Expression e(exprref::random_tree(rng, 6, true));
        if (!exprref::same(exprref::ref_eval(e.root(), vars), exprref::run_impl(e, vars))) ++mismatches;
    }
    v.expect(mismatches == 0, std::to_string(mismatches) + " of 1000 expressions disagree with the reference");
}

void gateways(Verdict& v) {
    testsupport::Rng rng(7);
    int graphs = 0, disagreements = 0;
    for (; graphs < 250; ++graphs) {
        auto g = gatewayref::random_graph(rng);
        for (int x = 0; x <= 2; ++x) {
            auto expected = gatewayref::Oracle(g, x).run();
            auto got = gatewayref::engine_outcome(g, x);
            if (!got.consistent || !expected.contains(got.outcome)) ++disagreements;
        }
    }
    v.expect(graphs >= 200, "fewer than 200 graphs");
    v.expect(disagreements == 0, std::to_string(disagreements) + " runs disagree with the oracle");
}

void constraint_gate(Verdict& v) {
    // Constant over the limit: rejected before anything runs.
    auto def = parse_process(read_fixture("thermometer.bpmn"));
    Registry reg = testsupport::festo_registry();
    auto plan = std::get<BindingPlan>(resolve(def, reg, SelectionPolicy::AutoStrict));
    plan.bindings.at("Task_Drilling").parameters.at("noOfHoles") = parse_value_expr("9");
    auto diags = validate_plan(plan, def, reg);
    v.expect(diags.size() == 1 && diags[0].kind == DiagnosticKind::ConstraintViolated,
             "validate_plan did not flag the constant 9");

    Env env("c8");
    env.register_festo();
    std::string gated = read_fixture("thermometer.bpmn");
    auto at = gated.find("${Activity_6k239cs_NoOfHoles}");
    gated.replace(at, std::string("${Activity_6k239cs_NoOfHoles}").size(), "9");
    auto gated_def = env.deploy(gated);
    auto rejected = env.post("/processes/" + gated_def + "/resolutions", {{"policy", "AutoStrict"}});
    v.expect(rejected && rejected->status == 400 &&
                 json::parse(rejected->body)["diagnostics"][0]["kind"] == "ConstraintViolated",
             "constant 9 not rejected by the service");

    // Variable over the limit: thrown at invocation and caught.
    auto def_id = env.deploy(read_fixture("thermometer.bpmn"));
    auto session = env.ok_json(env.post("/processes/" + def_id + "/resolutions", {{"policy", "AutoStrict"}}), 201);
    auto id = env.start(session["sessionId"]);
    env.complete_order(id, {{"Color", "red"}, {"NoOfHoles", 9}});
    auto events = env.follow(id);
    auto thrown = of_kind(events, "ErrorThrown");
    v.expect(thrown.size() == 1 && thrown[0]["payload"]["code"] == "ParameterConstraint" &&
                 thrown[0]["node"] == "Task_Drilling",
             "ParameterConstraint not thrown at drilling");
    auto caught = of_kind(events, "ErrorCaught");
    v.expect(caught.size() == 1 && caught[0]["node"] == "Boundary_Drilling", "boundary did not catch");
    v.expect(completed_node(events, "EndEvent_Failed"), "alternative end not reached");
    v.expect(env.module(kDrill1).invocations("drill1-drilling").empty(), "drill was invoked");
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
        {"thermometer happy path", happy_path},
        {"error path with injected abort", error_path},
        {"module swap reuses the stored definition", module_swap},
        {"interactive choice between two drills", ambiguity},
        {"state machine table and recovery liveness", state_machine},
        {"parser round-trip and expression reference", round_trip},
        {"gateway semantics against the interleaving oracle", gateways},
        {"parameter constraint gate", constraint_gate},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        auto t0 = Clock::now();
        try {
            criteria[i].second(v);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - t0).count();
        std::ostringstream line;
        line << (v.passed() ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << " (" << ms << " ms)";
        if (!v.passed()) line << ": " << v.summary();
        std::cout << line.str() << std::endl;
        failed += !v.passed();
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
