#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "skillflow/plant.hpp"

namespace skillflow {

/// Serves one virtual module over the HTTP wire protocol:
///   PUT  /skills/{id}/parameters
///   POST /skills/{id}/transitions/{start|stop|abort|reset|clear}
///   GET  /skills/{id}/state
///   GET  /skills/{id}/events?since=&timeoutMs=
///   POST /skills/{id}/inject
class PlantServer {
public:
    /// Binds immediately; port 0 picks a free port. Throws PortUnavailable.
    PlantServer(std::shared_ptr<VirtualModule> module, const std::string& host, std::uint16_t port);
    ~PlantServer();

    PlantServer(const PlantServer&) = delete;
    PlantServer& operator=(const PlantServer&) = delete;

    std::uint16_t port() const noexcept;
    std::string base_url() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// A running virtual module, optionally reachable over HTTP.
struct ModuleHandle {
    std::shared_ptr<VirtualModule> module;
    std::unique_ptr<PlantServer> server;

    /// The machine descriptor with every skill interface pointing at this
    /// module (http when served, in-process otherwise).
    MachineDefinition descriptor() const;
};

/// Throws ConfigError, PortUnavailable.
ModuleHandle spawn_module(VirtualModuleConfig config, bool serve_http = true);

} // namespace skillflow
