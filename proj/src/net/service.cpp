#include "skillflow/service.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "skillflow/error.hpp"
#include "skillflow/http_connector.hpp"
#include "skillflow/notification.hpp"

namespace skillflow {

using nlohmann::json;

namespace {

std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

std::string describe(const std::vector<Diagnostic>& diags) {
    std::string out;
    for (const auto& d : diags) {
        if (!out.empty()) out += "; ";
        out += std::string(to_string(d.kind)) + " at " + d.element + ": " + d.message;
    }
    return out;
}

std::optional<DiagnosticKind> parse_diagnostic_kind(std::string_view text) {
    for (int i = 0; i <= static_cast<int>(DiagnosticKind::MissingOutput); ++i)
        if (to_string(static_cast<DiagnosticKind>(i)) == text) return static_cast<DiagnosticKind>(i);
    return std::nullopt;
}

json binding_to_json(const TaskBinding& b) {
    BindingPlan p{"", {{"t", b}}};
    return to_json(p)["bindings"]["t"];
}

TaskBinding binding_from_json(const json& j) {
    return plan_from_json({{"definitionId", ""}, {"bindings", {{"t", j}}}}).bindings.at("t");
}

json resolution_state_to_json(const Resolution& r) {
    if (const auto* plan = std::get_if<BindingPlan>(&r)) return {{"plan", to_json(*plan)}};
    const auto& p = std::get<PendingDecisions>(r);
    json pending = json::array();
    for (const auto& d : p.pending) {
        json cands = json::array();
        for (const auto& c : d.candidates) cands.push_back({{"skill", c.skill_iri}, {"binding", binding_to_json(c.binding)}});
        pending.push_back({{"taskId", d.task_id}, {"capabilityIri", d.capability_iri}, {"candidates", cands}});
    }
    json decided = json::object();
    for (const auto& [task, b] : p.decided) decided[task] = binding_to_json(b);
    return {{"definitionId", p.definition_id}, {"pending", pending}, {"decided", decided}};
}

Resolution resolution_state_from_json(const json& j) {
    if (j.contains("plan")) return plan_from_json(j.at("plan"));
    PendingDecisions p;
    p.definition_id = j.at("definitionId").get<std::string>();
    for (const auto& d : j.at("pending")) {
        PendingDecision pd{d.at("taskId").get<std::string>(), d.at("capabilityIri").get<std::string>(), {}};
        for (const auto& c : d.at("candidates"))
            pd.candidates.push_back({c.at("skill").get<std::string>(), binding_from_json(c.at("binding"))});
        p.pending.push_back(std::move(pd));
    }
    for (const auto& [task, b] : j.at("decided").items()) p.decided.emplace(task, binding_from_json(b));
    return p;
}

std::string deployment_key(const DeploymentRecord& r) {
    return "deployments/" + r.process_id + "." + std::to_string(r.version) + ".bpmn";
}

std::uint64_t numeric_suffix(const std::string& s, const std::string& prefix) {
    if (s.rfind(prefix, 0) != 0) return 0;
    try {
        return std::stoull(s.substr(prefix.size()));
    } catch (const std::exception&) {
        return 0;
    }
}

} // namespace

ValidationFailure::ValidationFailure(std::vector<Diagnostic> diagnostics)
    : Error(ErrorCode::ValidationFailed, describe(diagnostics),
            diagnostics.empty() ? std::string{} : diagnostics.front().element),
      diagnostics_(std::move(diagnostics)) {}

json to_json(const Diagnostic& d) {
    return {{"kind", to_string(d.kind)}, {"element", d.element}, {"message", d.message}};
}

json to_json(const DeploymentRecord& r, bool with_xml) {
    json diags = json::array();
    for (const auto& d : r.diagnostics) diags.push_back(to_json(d));
    json out{{"definitionId", r.definition_id}, {"processId", r.process_id}, {"version", r.version},
             {"name", r.name},                  {"deployedAt", r.deployed_at_ms}, {"diagnostics", diags}};
    if (with_xml) out["xml"] = r.xml;
    return out;
}

ServiceConfig load_service_config(const std::string& path) {
    ServiceConfig c;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path, path);
        try {
            json j = json::parse(in);
            c.data_dir = j.value("dataDir", c.data_dir);
            c.host = j.value("host", c.host);
            c.port = j.value("port", c.port);
            c.notification_sink = j.value("notificationSink", c.notification_sink);
            c.registry_file = j.value("registryFile", c.registry_file);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ConfigError, "malformed config " + path + ": " + e.what(), path);
        }
    }
    auto env = [](const char* name) -> std::optional<std::string> {
        const char* v = std::getenv(name);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
    if (auto v = env("SKILLFLOW_DATA_DIR")) c.data_dir = *v;
    if (auto v = env("SKILLFLOW_HOST")) c.host = *v;
    if (auto v = env("SKILLFLOW_PORT")) {
        try {
            int port = std::stoi(*v);
            if (port < 0 || port > 65535) throw std::out_of_range("port");
            c.port = static_cast<std::uint16_t>(port);
        } catch (const std::exception&) {
            throw Error(ErrorCode::ConfigError, "bad SKILLFLOW_PORT " + *v, *v);
        }
    }
    if (auto v = env("SKILLFLOW_NOTIFICATION_SINK")) c.notification_sink = *v;
    if (auto v = env("SKILLFLOW_REGISTRY_FILE")) c.registry_file = *v;
    return c;
}

Service::Service(ServiceConfig config, std::shared_ptr<Storage> storage, std::shared_ptr<SkillConnector> connector,
                 std::shared_ptr<NotificationSink> sink)
    : config_(std::move(config)), storage_(std::move(storage)), sink_(std::move(sink)),
      registry_(std::make_shared<Registry>()) {
    if (!sink_) {
        if (config_.notification_sink == "memory")
            sink_ = std::make_shared<MemorySink>();
        else if (config_.notification_sink == "file")
            sink_ = std::make_shared<FileSink>(std::filesystem::path(config_.data_dir) / "notifications.jsonl");
        else if (config_.notification_sink.rfind("http", 0) == 0)
            sink_ = std::make_shared<WebhookSink>(config_.notification_sink);
        else
            throw Error(ErrorCode::ConfigError, "unknown notification sink " + config_.notification_sink);
    }
    load();
    EngineOptions options;
    std::shared_ptr<Storage> store = storage_;
    options.on_event = [store](const std::string& instance_id, const EngineEvent& e) {
        store->append("instances/" + instance_id + ".jsonl", skillflow::to_json(e).dump() + "\n");
    };
    engine_ = std::make_unique<Engine>(std::move(connector), sink_, std::move(options));
}

Service::~Service() = default;

void Service::load() {
    if (auto doc = storage_->read("registry.json")) {
        registry_ = std::make_shared<Registry>(load_registry(*doc));
    } else if (!config_.registry_file.empty()) {
        std::ifstream in(config_.registry_file, std::ios::binary);
        if (!in) throw Error(ErrorCode::ConfigError, "cannot read registry " + config_.registry_file);
        std::stringstream ss;
        ss << in.rdbuf();
        Registry r = load_registry(ss.str());
        persist_registry(r);
        registry_ = std::make_shared<Registry>(std::move(r));
    }
    if (auto index = storage_->read("deployments/index.json")) {
        for (const auto& j : json::parse(*index)) {
            DeploymentRecord r;
            r.definition_id = j.at("definitionId").get<std::string>();
            r.process_id = j.at("processId").get<std::string>();
            r.version = j.at("version").get<int>();
            r.name = j.value("name", "");
            r.deployed_at_ms = j.value("deployedAt", std::int64_t{0});
            for (const auto& d : j.value("diagnostics", json::array()))
                if (auto kind = parse_diagnostic_kind(d.value("kind", "")))
                    r.diagnostics.push_back({*kind, d.value("element", ""), d.value("message", "")});
            auto xml = storage_->read(deployment_key(r));
            if (!xml) throw Error(ErrorCode::StorageError, "missing deployment " + r.definition_id);
            r.xml = *xml;
            definitions_.emplace(r.definition_id, parse_process(r.xml));
            deployments_.push_back(std::move(r));
        }
    }
    for (const auto& key : storage_->list("resolutions/")) {
        auto doc = storage_->read(key);
        if (!doc) continue;
        json j = json::parse(*doc);
        ResolutionSession s;
        s.session_id = j.at("sessionId").get<std::string>();
        s.definition_id = j.at("definitionId").get<std::string>();
        s.policy = parse_policy(j.at("policy").get<std::string>()).value_or(SelectionPolicy::Interactive);
        s.state = resolution_state_from_json(j.at("state"));
        session_counter_ = std::max(session_counter_, numeric_suffix(s.session_id, "res-"));
        sessions_.emplace(s.session_id, std::move(s));
    }
    for (const auto& key : storage_->list("instances/")) {
        std::string name = key.substr(std::string("instances/").size());
        if (auto dot = name.rfind(".jsonl"); dot != std::string::npos) name.resize(dot);
        instance_counter_ = std::max(instance_counter_, numeric_suffix(name, "inst-"));
    }
}

std::shared_ptr<const Registry> Service::registry() const {
    std::shared_lock lock(registry_mu_);
    return registry_;
}

void Service::persist_registry(const Registry& next) { storage_->write("registry.json", skillflow::to_json(next).dump(2)); }

void Service::add_capability(const Capability& capability) {
    std::unique_lock lock(registry_mu_);
    auto next = std::make_shared<Registry>(*registry_);
    next->add_capability(capability);
    persist_registry(*next);
    registry_ = std::move(next);
}

void Service::register_machine(const MachineDefinition& machine) {
    std::unique_lock lock(registry_mu_);
    auto next = std::make_shared<Registry>(*registry_);
    next->register_machine(machine);
    persist_registry(*next);
    registry_ = std::move(next);
}

void Service::unregister_machine(const std::string& iri) {
    std::unique_lock lock(registry_mu_);
    auto next = std::make_shared<Registry>(*registry_);
    next->unregister_machine(iri);
    persist_registry(*next);
    registry_ = std::move(next);
}

void Service::persist_deployments(const std::vector<DeploymentRecord>& next) {
    json index = json::array();
    for (const auto& r : next) index.push_back(skillflow::to_json(r));
    storage_->write("deployments/index.json", index.dump(2));
}

DeploymentRecord Service::deploy(const std::string& xml) {
    ProcessDefinition def = parse_process(xml);
    if (auto diags = validate_process(def, nullptr); !diags.empty()) throw ValidationFailure(std::move(diags));
    auto reg = registry();

    std::lock_guard lock(mu_);
    DeploymentRecord r;
    r.process_id = def.id;
    r.version = 1 + static_cast<int>(std::count_if(deployments_.begin(), deployments_.end(),
                                                   [&](const auto& d) { return d.process_id == def.id; }));
    r.definition_id = def.id + ":" + std::to_string(r.version);
    r.name = def.name;
    r.xml = xml;
    r.deployed_at_ms = now_ms();
    r.diagnostics = validate_process(def, reg.get());

    std::vector<DeploymentRecord> next = deployments_;
    next.push_back(r);
    storage_->write(deployment_key(r), xml);
    try {
        persist_deployments(next);
    } catch (const Error&) {
        try {
            storage_->remove(deployment_key(r));
        } catch (const Error&) {
        }
        throw;
    }
    deployments_ = std::move(next);
    definitions_.emplace(r.definition_id, std::move(def));
    return r;
}

std::vector<DeploymentRecord> Service::deployments() const {
    std::lock_guard lock(mu_);
    return deployments_;
}

DeploymentRecord Service::deployment(const std::string& definition_id) const {
    std::lock_guard lock(mu_);
    for (const auto& d : deployments_)
        if (d.definition_id == definition_id) return d;
    throw Error(ErrorCode::NotFound, "no deployment " + definition_id, definition_id);
}

ResolutionSession Service::create_resolution(const std::string& definition_id, SelectionPolicy policy) {
    auto reg = registry();
    std::lock_guard lock(mu_);
    auto def = definitions_.find(definition_id);
    if (def == definitions_.end()) throw Error(ErrorCode::NotFound, "no deployment " + definition_id, definition_id);
    auto diags = validate_process(def->second, reg.get());
    // Unknown capabilities surface as NoSkillAvailable from resolve.
    std::erase_if(diags, [](const Diagnostic& d) { return d.kind == DiagnosticKind::UnknownCapability; });
    if (!diags.empty()) throw ValidationFailure(std::move(diags));

    ResolutionSession s;
    s.session_id = "res-" + std::to_string(session_counter_ + 1);
    s.definition_id = definition_id;
    s.policy = policy;
    s.state = resolve(def->second, *reg, policy);
    if (auto* plan = std::get_if<BindingPlan>(&s.state)) plan->definition_id = def->second.id;
    json doc{{"sessionId", s.session_id},
             {"definitionId", s.definition_id},
             {"policy", to_string(policy)},
             {"state", resolution_state_to_json(s.state)}};
    storage_->write("resolutions/" + s.session_id + ".json", doc.dump(2));
    ++session_counter_;
    sessions_.emplace(s.session_id, s);
    return s;
}

ResolutionSession Service::resolution(const std::string& session_id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no resolution " + session_id, session_id);
    return it->second;
}

ResolutionSession Service::decide(const std::string& session_id, const std::string& task_id,
                                  const std::string& skill_iri) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no resolution " + session_id, session_id);
    const auto* pending = std::get_if<PendingDecisions>(&it->second.state);
    if (!pending)
        throw Error(ErrorCode::UnknownPendingTask, "resolution " + session_id + " has no pending decisions", task_id);
    ResolutionSession next = it->second;
    next.state = skillflow::decide(*pending, task_id, skill_iri);
    json doc{{"sessionId", next.session_id},
             {"definitionId", next.definition_id},
             {"policy", to_string(next.policy)},
             {"state", resolution_state_to_json(next.state)}};
    storage_->write("resolutions/" + next.session_id + ".json", doc.dump(2));
    it->second = next;
    return next;
}

json Service::to_json(const ResolutionSession& s) const {
    auto reg = registry();
    json out{{"sessionId", s.session_id},
             {"definitionId", s.definition_id},
             {"policy", to_string(s.policy)},
             {"complete", s.complete()}};
    if (const auto* plan = std::get_if<BindingPlan>(&s.state)) {
        out["plan"] = skillflow::to_json(*plan);
        return out;
    }
    const auto& p = std::get<PendingDecisions>(s.state);
    json pending = json::array();
    for (const auto& d : p.pending) {
        json cands = json::array();
        for (const auto& c : d.candidates) {
            json cand{{"skill", c.skill_iri}};
            if (const Skill* sk = reg->find_skill(c.skill_iri)) {
                cand["skillName"] = sk->name;
                cand["machine"] = sk->machine_iri;
                if (const Machine* m = reg->find_machine(sk->machine_iri)) cand["machineName"] = m->name;
            }
            cands.push_back(cand);
        }
        pending.push_back({{"taskId", d.task_id}, {"capabilityIri", d.capability_iri}, {"candidates", cands}});
    }
    json decided = json::object();
    for (const auto& [task, b] : p.decided) decided[task] = b.skill_iri;
    out["pendingDecisions"] = pending;
    out["decided"] = decided;
    return out;
}

std::string Service::start_instance(const std::string& session_id, const VariableMap& initial) {
    auto reg = registry();
    ProcessDefinition def;
    BindingPlan plan;
    std::string id;
    {
        std::lock_guard lock(mu_);
        auto it = sessions_.find(session_id);
        if (it == sessions_.end()) throw Error(ErrorCode::NotFound, "no resolution " + session_id, session_id);
        const auto* p = std::get_if<BindingPlan>(&it->second.state);
        if (!p) throw Error(ErrorCode::PlanIncomplete, "resolution " + session_id + " has pending decisions", session_id);
        plan = *p;
        def = definitions_.at(it->second.definition_id);
        id = "inst-" + std::to_string(++instance_counter_);
    }
    return engine_->start_instance(def, plan, *reg, initial, id);
}

std::vector<NotificationRecord> Service::notifications() const {
    if (auto file = std::dynamic_pointer_cast<FileSink>(sink_)) return file->records();
    return engine_->notifications();
}

} // namespace skillflow
