#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "skillflow/service.hpp"

namespace skillflow {

/// HTTP+JSON front end of a Service. Errors are {"error", "message"} with
/// 400/404/409/500/502 statuses.
class ServiceHttpServer {
public:
    /// Binds immediately; port 0 picks a free port. Throws PortUnavailable.
    ServiceHttpServer(Service& service, const std::string& host, std::uint16_t port);
    ~ServiceHttpServer();

    ServiceHttpServer(const ServiceHttpServer&) = delete;
    ServiceHttpServer& operator=(const ServiceHttpServer&) = delete;

    std::uint16_t port() const noexcept;
    std::string base_url() const;
    /// Serves on a background thread.
    void start();
    /// Serves on the calling thread until stop().
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace skillflow
