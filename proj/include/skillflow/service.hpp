#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "skillflow/connector.hpp"
#include "skillflow/engine.hpp"
#include "skillflow/error.hpp"
#include "skillflow/process.hpp"
#include "skillflow/registry.hpp"
#include "skillflow/resolution.hpp"
#include "skillflow/storage.hpp"

namespace skillflow {

struct ServiceConfig {
    std::string data_dir = "./skillflow-data";
    std::string host = "127.0.0.1";
    std::uint16_t port = 8080;
    /// "memory", "file" (notifications.jsonl in the data dir) or a webhook URL.
    std::string notification_sink = "file";
    /// Registry document loaded when the data dir holds none yet.
    std::string registry_file;
};

/// Reads an optional JSON config file ({dataDir, host, port,
/// notificationSink, registryFile}), then applies SKILLFLOW_DATA_DIR,
/// SKILLFLOW_HOST, SKILLFLOW_PORT, SKILLFLOW_NOTIFICATION_SINK and
/// SKILLFLOW_REGISTRY_FILE. Throws ConfigError.
ServiceConfig load_service_config(const std::string& path);

struct DeploymentRecord {
    std::string definition_id; // "<processId>:<version>"
    std::string process_id;
    int version = 1;
    std::string name;
    std::string xml;
    std::int64_t deployed_at_ms = 0;
    std::vector<Diagnostic> diagnostics;
};

struct ResolutionSession {
    std::string session_id;
    std::string definition_id;
    SelectionPolicy policy = SelectionPolicy::Interactive;
    Resolution state;

    bool complete() const noexcept { return std::holds_alternative<BindingPlan>(state); }
};

/// Rejection carrying the diagnostics that caused it.
class ValidationFailure : public Error {
public:
    explicit ValidationFailure(std::vector<Diagnostic> diagnostics);
    const std::vector<Diagnostic>& diagnostics() const noexcept { return diagnostics_; }

private:
    std::vector<Diagnostic> diagnostics_;
};

nlohmann::json to_json(const DeploymentRecord& record, bool with_xml = false);
nlohmann::json to_json(const Diagnostic& diagnostic);

/// Registry, deployments, resolution sessions and instances behind one
/// facade. Mutations persist before they become visible; a failed write
/// leaves both memory and storage as they were.
class Service {
public:
    Service(ServiceConfig config, std::shared_ptr<Storage> storage, std::shared_ptr<SkillConnector> connector,
            std::shared_ptr<NotificationSink> sink = nullptr);
    ~Service();

    const ServiceConfig& config() const noexcept { return config_; }

    // registry
    std::shared_ptr<const Registry> registry() const;
    void add_capability(const Capability& capability);
    void register_machine(const MachineDefinition& machine);
    void unregister_machine(const std::string& iri);

    // deployments
    DeploymentRecord deploy(const std::string& xml);
    std::vector<DeploymentRecord> deployments() const;
    DeploymentRecord deployment(const std::string& definition_id) const;

    // resolution
    ResolutionSession create_resolution(const std::string& definition_id, SelectionPolicy policy);
    ResolutionSession resolution(const std::string& session_id) const;
    ResolutionSession decide(const std::string& session_id, const std::string& task_id, const std::string& skill_iri);
    nlohmann::json to_json(const ResolutionSession& session) const;

    // instances
    std::string start_instance(const std::string& session_id, const VariableMap& initial);
    Engine& engine() noexcept { return *engine_; }
    const Engine& engine() const noexcept { return *engine_; }
    std::vector<NotificationRecord> notifications() const;

private:
    void load();
    void persist_registry(const Registry& next);
    void persist_deployments(const std::vector<DeploymentRecord>& next);

    ServiceConfig config_;
    std::shared_ptr<Storage> storage_;
    std::shared_ptr<NotificationSink> sink_;

    mutable std::shared_mutex registry_mu_;
    std::shared_ptr<const Registry> registry_;

    mutable std::mutex mu_;
    std::vector<DeploymentRecord> deployments_;
    std::map<std::string, ProcessDefinition> definitions_;
    std::map<std::string, ResolutionSession> sessions_;
    std::uint64_t session_counter_ = 0;
    std::uint64_t instance_counter_ = 0;

    std::unique_ptr<Engine> engine_;
};

} // namespace skillflow
