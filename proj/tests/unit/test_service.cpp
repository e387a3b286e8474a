#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "skillflow/error.hpp"
#include "skillflow/service.hpp"
#include "skillflow/service_http.hpp"
#include "support.hpp"

using namespace skillflow;
using namespace std::chrono_literals;
using nlohmann::json;
using testsupport::read_fixture;

namespace {

/// In-memory storage that can be told to fail upcoming writes.
class FaultyStorage : public Storage {
public:
    void write(const std::string& key, const std::string& bytes) override {
        std::lock_guard lock(mu_);
        trip(key);
        data_[key] = bytes;
    }
    void append(const std::string& key, const std::string& bytes) override {
        std::lock_guard lock(mu_);
        trip(key);
        data_[key] += bytes;
    }
    std::optional<std::string> read(const std::string& key) const override {
        std::lock_guard lock(mu_);
        auto it = data_.find(key);
        if (it == data_.end()) return std::nullopt;
        return it->second;
    }
    void remove(const std::string& key) override {
        std::lock_guard lock(mu_);
        data_.erase(key);
    }
    std::vector<std::string> list(const std::string& prefix) const override {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [k, v] : data_)
            if (k.rfind(prefix, 0) == 0 && k.find('/', prefix.size()) == std::string::npos) out.push_back(k);
        return out;
    }

    /// The write after `skip` successful ones throws.
    void fail_after(int skip) {
        std::lock_guard lock(mu_);
        fail_in_ = skip;
    }
    std::map<std::string, std::string> dump() const {
        std::lock_guard lock(mu_);
        return data_;
    }

private:
    void trip(const std::string& key) {
        if (fail_in_ < 0) return;
        if (fail_in_-- == 0) throw Error(ErrorCode::StorageError, "disk full", key);
    }

    mutable std::mutex mu_;
    std::map<std::string, std::string> data_;
    int fail_in_ = -1;
};

struct Plant {
    std::vector<std::shared_ptr<VirtualModule>> modules;
    std::shared_ptr<InProcessConnector> connector = std::make_shared<InProcessConnector>();

    Plant() {
        add("festo_plant.json");
        add("drill2_plant.json");
    }
    void add(const std::string& fixture) {
        for (auto& cfg : load_plant_config(read_fixture(fixture))) {
            auto m = std::make_shared<VirtualModule>(cfg);
            connector->attach(m);
            modules.push_back(m);
        }
    }
    VirtualModule& module(const std::string& machine) {
        for (auto& m : modules)
            if (m->machine().iri == machine) return *m;
        throw std::runtime_error("no module " + machine);
    }
};

ServiceConfig memory_config() {
    ServiceConfig c;
    c.notification_sink = "memory";
    return c;
}

struct Harness {
    std::shared_ptr<FaultyStorage> storage = std::make_shared<FaultyStorage>();
    Plant plant;
    Service service{memory_config(), storage, plant.connector};
    ServiceHttpServer server{service, "127.0.0.1", 0};
    httplib::Client client{"127.0.0.1", server.port()};

    Harness() {
        server.start();
        client.set_read_timeout(10, 0);
        wait_up();
    }
    ~Harness() { server.stop(); }

    void wait_up() {
        for (int i = 0; i < 100; ++i) {
            if (client.Get("/registry/capabilities")) return;
            std::this_thread::sleep_for(20ms);
        }
        FAIL("service did not come up");
    }

    void load_festo() {
        Registry r = testsupport::festo_registry();
        for (const auto& [iri, c] : r.capabilities()) REQUIRE(post("/registry/capabilities", to_json(c))->status == 201);
        for (const auto& [iri, m] : r.machines())
            REQUIRE(post("/registry/machines", to_json(*r.machine_definition(iri)))->status == 201);
    }
    httplib::Result post(const std::string& path, const json& body) {
        return client.Post(path, body.dump(), "application/json");
    }
    json get_json(const std::string& path) {
        auto res = client.Get(path);
        REQUIRE(res);
        REQUIRE(res->status == 200);
        return json::parse(res->body);
    }
    std::string deploy(const std::string& fixture) {
        auto res = client.Post("/processes", read_fixture(fixture), "application/xml");
        REQUIRE(res);
        REQUIRE(res->status == 201);
        return json::parse(res->body).at("definitionId").get<std::string>();
    }
    json resolve(const std::string& def, const std::string& policy) {
        auto res = post("/processes/" + def + "/resolutions", {{"policy", policy}});
        REQUIRE(res);
        CHECK(res->status == 201);
        return json::parse(res->body);
    }
    std::string start(const std::string& session) {
        auto res = post("/instances", {{"sessionId", session}});
        REQUIRE(res);
        REQUIRE(res->status == 201);
        return json::parse(res->body).at("instanceId").get<std::string>();
    }
    json wait_ended(const std::string& id) {
        auto deadline = std::chrono::steady_clock::now() + 10s;
        while (std::chrono::steady_clock::now() < deadline) {
            json v = get_json("/instances/" + id);
            std::string s = v.at("status");
            if (s == "Completed" || s == "Faulted" || s == "Cancelled") return v;
            std::this_thread::sleep_for(20ms);
        }
        FAIL("instance did not end");
        return {};
    }
};

std::string machine_json(const std::string& fixture) { return read_fixture(fixture); }

void expect_error(const httplib::Result& res, int status, const std::string& code) {
    REQUIRE(res);
    CHECK(res->status == status);
    CHECK(json::parse(res->body).at("error") == code);
}

} // namespace

TEST_CASE("registry endpoints") {
    Harness h;
    CHECK(h.get_json("/registry/capabilities") == json::array());
    h.load_festo();
    auto caps = h.get_json("/registry/capabilities");
    CHECK(caps.size() == 3);
    CHECK(h.get_json("/registry/machines").size() == 3);

    auto res = h.client.Post("/registry/machines", machine_json("drill2_machine.json"), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    CHECK(h.get_json("/registry/capabilities") == caps);
    CHECK(h.get_json("/registry/machines").size() == 4);

    expect_error(h.client.Post("/registry/machines", machine_json("drill2_machine.json"), "application/json"), 409,
                 "DuplicateIri");
    expect_error(h.client.Post("/registry/machines", "{", "application/json"), 400, "ParseError");

    res = h.client.Delete("/registry/machines/urn:skillflow:machine:drill1");
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(h.get_json("/registry/machines").size() == 3);
    expect_error(h.client.Delete("/registry/machines/urn:skillflow:machine:drill1"), 404, "UnknownIri");
}

TEST_CASE("deployment endpoints") {
    Harness h;
    std::string xml = read_fixture("thermometer.bpmn");
    CHECK(h.deploy("thermometer.bpmn") == "thermometer:1");
    // Same bytes again: a new version, never an in-place change.
    CHECK(h.deploy("thermometer.bpmn") == "thermometer:2");
    auto list = h.get_json("/processes");
    REQUIRE(list.size() == 2);
    CHECK(list[0]["name"] == "Thermometer production");
    for (const char* id : {"thermometer:1", "thermometer:2"}) {
        auto res = h.client.Get(std::string("/processes/") + id + "/xml");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(res->body == xml);
    }
    CHECK(h.get_json("/processes/thermometer:1")["definitionId"] == "thermometer:1");
    expect_error(h.client.Get("/processes/nope:1"), 404, "NotFound");
    expect_error(h.client.Post("/processes", "<bpmn:definitions", "application/xml"), 400, "XmlError");

    std::string placeholder = R"(<?xml version="1.0"?>
<bpmn:definitions xmlns:bpmn="http://www.omg.org/spec/BPMN/20100524/MODEL" id="d" targetNamespace="urn:t">
<bpmn:process id="p" isExecutable="true"><bpmn:startEvent id="s" /><bpmn:serviceTask id="t" /><bpmn:endEvent id="e" />
<bpmn:sequenceFlow id="f0" sourceRef="s" targetRef="t" /><bpmn:sequenceFlow id="f1" sourceRef="t" targetRef="e" />
</bpmn:process></bpmn:definitions>)";
    auto res = h.client.Post("/processes", placeholder, "application/xml");
    REQUIRE(res);
    CHECK(res->status == 400);
    auto body = json::parse(res->body);
    CHECK(body["error"] == "ValidationFailed");
    REQUIRE(body["diagnostics"].size() == 1);
    CHECK(body["diagnostics"][0]["kind"] == "MissingBinding");
    CHECK(body["diagnostics"][0]["element"] == "t");
    CHECK(h.get_json("/processes").size() == 2);
}

TEST_CASE("resolution endpoints") {
    Harness h;
    h.load_festo();
    auto def = h.deploy("thermometer.bpmn");

    auto direct = h.resolve(def, "Interactive");
    CHECK(direct["complete"] == true);
    CHECK(direct["plan"]["bindings"]["Task_Drilling"]["skill"] == "urn:skillflow:skill:drill1-drilling");
    expect_error(h.post("/processes/none:1/resolutions", json::object()), 404, "NotFound");
    expect_error(h.post("/processes/" + def + "/resolutions", {{"policy", "random"}}), 400, "ParseError");

    REQUIRE(h.client.Post("/registry/machines", machine_json("drill2_machine.json"), "application/json")->status ==
            201);
    auto pending = h.resolve(def, "Interactive");
    CHECK(pending["complete"] == false);
    REQUIRE(pending["pendingDecisions"].size() == 1);
    auto cands = pending["pendingDecisions"][0]["candidates"];
    REQUIRE(cands.size() == 2);
    CHECK(cands[0]["skill"] == "urn:skillflow:skill:drill1-drilling");
    CHECK(cands[1]["machineName"] == "Drilling module 2");
    CHECK(cands[1]["skillName"] == "Drilling (module 2)");
    std::string session = pending["sessionId"];

    expect_error(h.post("/instances", {{"sessionId", session}}), 409, "PlanIncomplete");
    expect_error(h.post("/instances", {{"sessionId", "res-99"}}), 404, "NotFound");
    expect_error(h.post("/resolutions/" + session + "/decisions",
                        {{"taskId", "Task_Drilling"}, {"skill", "urn:skillflow:skill:transport"}}),
                 409, "NotACandidate");
    expect_error(h.post("/resolutions/res-99/decisions",
                        {{"taskId", "Task_Drilling"}, {"skill", "urn:skillflow:skill:drill2-drilling"}}),
                 404, "NotFound");
    auto done = h.post("/resolutions/" + session + "/decisions",
                       {{"taskId", "Task_Drilling"}, {"skill", "urn:skillflow:skill:drill2-drilling"}});
    REQUIRE(done);
    CHECK(done->status == 200);
    CHECK(json::parse(done->body)["complete"] == true);
    // A complete session does not change any more.
    expect_error(h.post("/resolutions/" + session + "/decisions",
                        {{"taskId", "Task_Drilling"}, {"skill", "urn:skillflow:skill:drill1-drilling"}}),
                 409, "UnknownPendingTask");
    CHECK(h.get_json("/resolutions/" + session)["plan"]["bindings"]["Task_Drilling"]["skill"] ==
          "urn:skillflow:skill:drill2-drilling");

    expect_error(h.post("/processes/" + def + "/resolutions", {{"policy", "AutoStrict"}}), 409,
                 "AmbiguousCapability");
    REQUIRE(h.client.Delete("/registry/machines/urn:skillflow:machine:transport")->status == 204);
    auto none = h.post("/processes/" + def + "/resolutions", json::object());
    expect_error(none, 409, "NoSkillAvailable");
    CHECK(json::parse(none->body)["subject"] == "Task_Transport");
}

TEST_CASE("instance endpoints drive a run to completion") {
    Harness h;
    h.load_festo();
    auto def = h.deploy("thermometer.bpmn");
    std::string session = h.resolve(def, "AutoStrict")["sessionId"];
    auto id = h.start(session);
    CHECK(id == "inst-1");

    auto v = h.get_json("/instances/" + id);
    CHECK(v["status"] == "WaitingUser");
    CHECK(v["workItems"][0]["taskId"] == "Activity_6k239cs");
    CHECK(h.get_json("/instances")[0]["status"] == "WaitingUser");

    expect_error(h.post("/instances/" + id + "/user-tasks/Activity_6k239cs/complete", {{"Color", "red"}}), 400,
                 "MissingField");
    expect_error(h.post("/instances/nope/user-tasks/Activity_6k239cs/complete", json::object()), 404,
                 "UnknownInstance");

    auto res = h.post("/instances/" + id + "/user-tasks/Activity_6k239cs/complete", {{"Color", "red"}, {"NoOfHoles", 3}});
    REQUIRE(res);
    CHECK(res->status == 204);
    v = h.get_json("/instances/" + id);
    for (const auto& t : v["tokens"]) CHECK(t != "Activity_6k239cs");
    CHECK(v["variables"]["Activity_6k239cs_NoOfHoles"] == 3);
    expect_error(h.post("/instances/" + id + "/user-tasks/Activity_6k239cs/complete", {{"Color", "red"}, {"NoOfHoles", 3}}),
                 409, "NoOpenWorkItem");

    // Follow the event stream with a cursor while watching for Execute.
    std::uint64_t cursor = 0;
    std::vector<std::uint64_t> seqs;
    bool saw_execute = false, ended = false;
    auto deadline = std::chrono::steady_clock::now() + 10s;
    while (!ended && std::chrono::steady_clock::now() < deadline) {
        auto events = h.get_json("/instances/" + id + "/events?since=" + std::to_string(cursor) + "&timeoutMs=500");
        for (const auto& e : events) {
            seqs.push_back(e["seq"]);
            cursor = e["seq"];
            if (e["kind"] == "InstanceEnded") ended = true;
        }
        auto snap = h.get_json("/instances/" + id);
        if (snap["lastSkillState"].contains("Task_Drilling") && snap["lastSkillState"]["Task_Drilling"] == "Execute")
            saw_execute = true;
    }
    REQUIRE(ended);
    CHECK(saw_execute);
    for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(seqs[i] == i + 1);
    v = h.get_json("/instances/" + id + "?since=0");
    CHECK(v["status"] == "Completed");
    CHECK(v["history"].size() == seqs.size());
    CHECK(h.get_json("/notifications") == json::array());
    expect_error(h.post("/instances/" + id + "/cancel", json::object()), 409, "AlreadyEnded");
    expect_error(h.client.Get("/instances/nope"), 404, "UnknownInstance");
    expect_error(h.client.Get("/instances/" + id + "/events?since=x"), 400, "ParseError");

    // The event log is persisted one JSON object per line.
    auto log = h.storage->read("instances/" + id + ".jsonl");
    REQUIRE(log);
    CHECK(static_cast<std::size_t>(std::count(log->begin(), log->end(), '\n')) == seqs.size());
    auto drill = h.plant.module("urn:skillflow:machine:drill1").invocations("drill1-drilling");
    REQUIRE_FALSE(drill.empty());
    CHECK(drill[0].parameters.at("noOfHoles") == Value(3));
}

TEST_CASE("injected failure yields one notification; cancel while waiting") {
    Harness h;
    h.load_festo();
    auto def = h.deploy("thermometer.bpmn");
    std::string session = h.resolve(def, "AutoStrict")["sessionId"];
    h.plant.module("urn:skillflow:machine:drill1")
        .inject_failure("drill1-drilling", {FailureMode::Abort, FailurePhase::Execute, true});
    auto id = h.start(session);
    REQUIRE(h.post("/instances/" + id + "/user-tasks/Activity_6k239cs/complete", {{"Color", "red"}, {"NoOfHoles", 3}})
                ->status == 204);
    auto v = h.wait_ended(id);
    CHECK(v["status"] == "Completed");
    auto notes = h.get_json("/notifications");
    REQUIRE(notes.size() == 1);
    CHECK(notes[0]["instanceId"] == id);

    auto second = h.start(session);
    auto res = h.post("/instances/" + second + "/cancel", json::object());
    REQUIRE(res);
    CHECK(res->status == 204);
    CHECK(h.get_json("/instances/" + second)["status"] == "Cancelled");
}

TEST_CASE("mutations are atomic under storage failures") {
    auto storage = std::make_shared<FaultyStorage>();
    Plant plant;
    Service svc(memory_config(), storage, plant.connector);
    Registry festo = testsupport::festo_registry();
    for (const auto& [iri, c] : festo.capabilities()) svc.add_capability(c);
    for (const auto& [iri, m] : festo.machines()) svc.register_machine(*festo.machine_definition(iri));
    auto def = svc.deploy(read_fixture("thermometer.bpmn")).definition_id;
    auto interactive_session = [&] {
        return svc.create_resolution(def, SelectionPolicy::Interactive).session_id;
    };
    auto drill2 = machine_from_json(json::parse(read_fixture("drill2_machine.json")));

    struct Observed {
        std::map<std::string, std::string> stored;
        nlohmann::json registry;
        std::size_t deployments;
    };
    auto observe = [&] { return Observed{storage->dump(), to_json(*svc.registry()), svc.deployments().size()}; };
    auto same = [](const Observed& a, const Observed& b) {
        return a.stored == b.stored && a.registry == b.registry && a.deployments == b.deployments;
    };

    struct Op {
        const char* name;
        int writes; // persistence writes the operation performs
        std::function<void()> run;
    };
    svc.register_machine(drill2);
    std::string session = interactive_session();
    svc.unregister_machine(drill2.iri);
    std::vector<Op> ops = {
        {"add_capability", 1, [&] { svc.add_capability({"urn:skillflow:cap:Paint", "Paint", {}}); }},
        {"register_machine", 1, [&] { svc.register_machine(drill2); }},
        {"unregister_machine", 1, [&] { svc.unregister_machine("urn:skillflow:machine:drill1"); }},
        {"deploy", 2, [&] { svc.deploy(read_fixture("gateway.bpmn")); }},
        {"create_resolution", 1, [&] { svc.create_resolution(def, SelectionPolicy::AutoStrict); }},
        {"decide", 1, [&] { svc.decide(session, "Task_Drilling", "urn:skillflow:skill:drill1-drilling"); }},
    };
    for (const auto& op : ops) {
        for (int k = 0; k < op.writes; ++k) {
            CAPTURE(op.name);
            CAPTURE(k);
            auto before = observe();
            auto pending_before = svc.resolution(session).complete();
            storage->fail_after(k);
            try {
                op.run();
                FAIL("expected StorageError");
            } catch (const Error& e) {
                CHECK(e.code() == ErrorCode::StorageError);
            }
            storage->fail_after(-1);
            CHECK(same(before, observe()));
            CHECK(svc.resolution(session).complete() == pending_before);
        }
        // Without the fault the operation goes through.
        op.run();
    }

    // A failed session write does not consume the session id.
    storage->fail_after(0);
    CHECK_THROWS_AS(svc.create_resolution(def, SelectionPolicy::FirstDeterministic), Error);
    storage->fail_after(-1);
    auto next = svc.create_resolution(def, SelectionPolicy::FirstDeterministic);
    CHECK_THROWS_AS(svc.resolution("res-" + std::to_string(std::stoi(next.session_id.substr(4)) + 1)), Error);
}

TEST_CASE("storage failure maps to HTTP 500 and leaves state unchanged") {
    Harness h;
    h.load_festo();
    auto before = h.storage->dump();
    h.storage->fail_after(0);
    auto res = h.client.Post("/registry/machines", machine_json("drill2_machine.json"), "application/json");
    h.storage->fail_after(-1);
    expect_error(res, 500, "StorageError");
    CHECK(h.storage->dump() == before);
    CHECK(h.get_json("/registry/machines").size() == 3);
}

TEST_CASE("state survives a restart over the same storage") {
    auto storage = std::make_shared<FaultyStorage>();
    Plant plant;
    std::string def, session, instance;
    {
        Service svc(memory_config(), storage, plant.connector);
        Registry festo = testsupport::festo_registry();
        for (const auto& [iri, c] : festo.capabilities()) svc.add_capability(c);
        for (const auto& [iri, m] : festo.machines()) svc.register_machine(*festo.machine_definition(iri));
        def = svc.deploy(read_fixture("thermometer.bpmn")).definition_id;
        session = svc.create_resolution(def, SelectionPolicy::AutoStrict).session_id;
        instance = svc.start_instance(session, {});
        svc.engine().cancel_instance(instance);
    }
    Service again(memory_config(), storage, plant.connector);
    CHECK(to_json(*again.registry()) == to_json(testsupport::festo_registry()));
    REQUIRE(again.deployments().size() == 1);
    CHECK(again.deployment(def).xml == read_fixture("thermometer.bpmn"));
    CHECK(again.resolution(session).complete());
    CHECK(again.create_resolution(def, SelectionPolicy::AutoStrict).session_id != session);
    auto next = again.start_instance(session, {});
    CHECK(next != instance);
    again.engine().cancel_instance(next);
}

TEST_CASE("file storage and file-backed notifications") {
    auto dir = std::filesystem::temp_directory_path() / ("skillflow-test-" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    {
        ServiceConfig cfg;
        cfg.data_dir = dir.string();
        cfg.registry_file = testsupport::fixture_path("festo_registry.json");
        Plant plant;
        plant.module("urn:skillflow:machine:supply")
            .inject_failure("supply-part", {FailureMode::Stop, FailurePhase::Starting, true});
        Service svc(cfg, std::make_shared<FileStorage>(dir), plant.connector);
        CHECK(svc.registry()->machines().size() == 3);
        auto def = svc.deploy(read_fixture("thermometer.bpmn")).definition_id;
        CHECK(std::filesystem::exists(dir / "deployments" / "thermometer.1.bpmn"));
        auto session = svc.create_resolution(def, SelectionPolicy::AutoStrict).session_id;
        auto id = svc.start_instance(session, {});
        svc.engine().complete_user_task(id, "Activity_6k239cs", {{"Color", Value("red")}, {"NoOfHoles", Value(1)}});
        REQUIRE(svc.engine().wait_for(id, [](const InstanceView& v) { return is_ended(v.status); }, 10s));
        auto notes = svc.notifications();
        REQUIRE(notes.size() == 1);
        CHECK(notes[0].task_id == "Task_Notify");
        CHECK(std::filesystem::exists(dir / "notifications.jsonl"));
        CHECK(std::filesystem::exists(dir / "instances" / (id + ".jsonl")));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("service configuration from file and environment") {
    auto path = std::filesystem::temp_directory_path() / ("skillflow-cfg-" + std::to_string(::getpid()) + ".json");
    {
        std::ofstream out(path);
        out << R"({"dataDir": "/tmp/sf", "port": 9001, "notificationSink": "memory"})";
    }
    auto c = load_service_config(path.string());
    CHECK(c.data_dir == "/tmp/sf");
    CHECK(c.port == 9001);
    CHECK(c.notification_sink == "memory");
    CHECK(c.host == "127.0.0.1");

    ::setenv("SKILLFLOW_PORT", "9100", 1);
    ::setenv("SKILLFLOW_DATA_DIR", "/tmp/other", 1);
    c = load_service_config(path.string());
    CHECK(c.port == 9100);
    CHECK(c.data_dir == "/tmp/other");
    ::setenv("SKILLFLOW_PORT", "70000", 1);
    CHECK_THROWS_AS(load_service_config(path.string()), Error);
    ::unsetenv("SKILLFLOW_PORT");
    ::unsetenv("SKILLFLOW_DATA_DIR");

    CHECK_THROWS_AS(load_service_config("/nonexistent/config.json"), Error);
    {
        std::ofstream out(path);
        out << "{";
    }
    CHECK_THROWS_AS(load_service_config(path.string()), Error);
    std::filesystem::remove(path);

    ServiceConfig bad;
    bad.notification_sink = "carrier-pigeon";
    CHECK_THROWS_AS(Service(bad, std::make_shared<FaultyStorage>(), nullptr), Error);
}
