#include "skillflow/service_http.hpp"

#include <thread>

#include "http_util.hpp"

namespace skillflow {

using nlohmann::json;

namespace {

constexpr long kMaxPollMs = 30000;

template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const ValidationFailure& e) {
        json diags = json::array();
        for (const auto& d : e.diagnostics()) diags.push_back(to_json(d));
        net::send_json(res, 400, {{"error", to_string(e.code())}, {"message", e.what()}, {"diagnostics", diags}});
    } catch (const Error& e) {
        net::send_error(res, e);
    } catch (const json::exception& e) {
        net::send_error(res, 400, "ParseError", e.what());
    } catch (const std::exception& e) {
        net::send_error(res, 500, "InternalError", e.what());
    }
}

std::uint64_t query_u64(const httplib::Request& req, const char* key, std::uint64_t fallback) {
    if (!req.has_param(key)) return fallback;
    try {
        return std::stoull(req.get_param_value(key));
    } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, std::string("bad query parameter ") + key);
    }
}

json events_json(const std::vector<EngineEvent>& events) {
    json out = json::array();
    for (const auto& e : events) out.push_back(to_json(e));
    return out;
}

} // namespace

struct ServiceHttpServer::Impl {
    Service& service;
    httplib::Server server;
    std::string host;
    int port = 0;
    std::thread thread;

    explicit Impl(Service& s) : service(s) {}

    void routes() {
        server.new_task_queue = [] { return new httplib::ThreadPool(32); };
        server.set_socket_options(net::exclusive_socket_options);
        using Req = httplib::Request;
        using Res = httplib::Response;

        // registry
        server.Get("/registry/capabilities", [this](const Req&, Res& res) {
            guarded(res, [&] {
                json out = json::array();
                for (const auto& [iri, c] : service.registry()->capabilities()) out.push_back(to_json(c));
                net::send_json(res, 200, out);
            });
        });
        server.Post("/registry/capabilities", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                Capability c = capability_from_json(net::body_json(req));
                service.add_capability(c);
                net::send_json(res, 201, to_json(c));
            });
        });
        server.Get("/registry/machines", [this](const Req&, Res& res) {
            guarded(res, [&] {
                auto reg = service.registry();
                json out = json::array();
                for (const auto& [iri, m] : reg->machines()) out.push_back(to_json(*reg->machine_definition(iri)));
                net::send_json(res, 200, out);
            });
        });
        server.Post("/registry/machines", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                MachineDefinition m = machine_from_json(net::body_json(req));
                service.register_machine(m);
                net::send_json(res, 201, to_json(m));
            });
        });
        server.Delete(R"(/registry/machines/(.+))", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                service.unregister_machine(req.matches[1].str());
                res.status = 204;
            });
        });

        // processes
        server.Post("/processes", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                auto r = service.deploy(req.body);
                net::send_json(res, 201, to_json(r));
            });
        });
        server.Get("/processes", [this](const Req&, Res& res) {
            guarded(res, [&] {
                json out = json::array();
                for (const auto& r : service.deployments()) out.push_back(to_json(r));
                net::send_json(res, 200, out);
            });
        });
        server.Get(R"(/processes/([^/]+)/xml)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                auto r = service.deployment(req.matches[1].str());
                res.status = 200;
                res.set_content(r.xml, "application/xml");
            });
        });
        server.Get(R"(/processes/([^/]+))", [this](const Req& req, Res& res) {
            guarded(res, [&] { net::send_json(res, 200, to_json(service.deployment(req.matches[1].str()))); });
        });
        server.Post(R"(/processes/([^/]+)/resolutions)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                SelectionPolicy policy = SelectionPolicy::Interactive;
                if (!req.body.empty()) {
                    json body = net::body_json(req);
                    if (body.contains("policy")) {
                        auto p = parse_policy(body.at("policy").get<std::string>());
                        if (!p) throw Error(ErrorCode::ParseError, "unknown policy " + body.at("policy").dump());
                        policy = *p;
                    }
                }
                auto s = service.create_resolution(req.matches[1].str(), policy);
                net::send_json(res, 201, service.to_json(s));
            });
        });

        // resolutions
        server.Get(R"(/resolutions/([^/]+))", [this](const Req& req, Res& res) {
            guarded(res,
                    [&] { net::send_json(res, 200, service.to_json(service.resolution(req.matches[1].str()))); });
        });
        server.Post(R"(/resolutions/([^/]+)/decisions)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                json body = net::body_json(req);
                auto s = service.decide(req.matches[1].str(), body.at("taskId").get<std::string>(),
                                        body.at("skill").get<std::string>());
                net::send_json(res, 200, service.to_json(s));
            });
        });

        // instances
        server.Post("/instances", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                json body = net::body_json(req);
                VariableMap vars;
                if (body.contains("variables")) vars = variables_from_json(body.at("variables"));
                auto id = service.start_instance(body.at("sessionId").get<std::string>(), vars);
                net::send_json(res, 201, {{"instanceId", id}});
            });
        });
        server.Get("/instances", [this](const Req&, Res& res) {
            guarded(res, [&] {
                json out = json::array();
                for (const auto& id : service.engine().instance_ids()) {
                    auto v = service.engine().snapshot(id, UINT64_MAX);
                    out.push_back({{"instanceId", id},
                                   {"definitionId", v.definition_id},
                                   {"status", to_string(v.status)}});
                }
                net::send_json(res, 200, out);
            });
        });
        server.Get(R"(/instances/([^/]+)/events)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                auto since = query_u64(req, "since", 0);
                auto timeout = std::min<long>(static_cast<long>(query_u64(req, "timeoutMs", 0)), kMaxPollMs);
                auto events =
                    service.engine().events_since(req.matches[1].str(), since, std::chrono::milliseconds(timeout));
                net::send_json(res, 200, events_json(events));
            });
        });
        server.Get(R"(/instances/([^/]+))", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                auto since = query_u64(req, "since", UINT64_MAX);
                net::send_json(res, 200, to_json(service.engine().snapshot(req.matches[1].str(), since)));
            });
        });
        server.Post(R"(/instances/([^/]+)/user-tasks/([^/]+)/complete)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                json body = net::body_json(req);
                json values = body.contains("values") ? body.at("values") : body;
                service.engine().complete_user_task(req.matches[1].str(), req.matches[2].str(),
                                                    variables_from_json(values));
                res.status = 204;
            });
        });
        server.Post(R"(/instances/([^/]+)/cancel)", [this](const Req& req, Res& res) {
            guarded(res, [&] {
                service.engine().cancel_instance(req.matches[1].str());
                res.status = 204;
            });
        });

        server.Get("/notifications", [this](const Req&, Res& res) {
            guarded(res, [&] {
                json out = json::array();
                for (const auto& n : service.notifications()) out.push_back(to_json(n));
                net::send_json(res, 200, out);
            });
        });
    }
};

ServiceHttpServer::ServiceHttpServer(Service& service, const std::string& host, std::uint16_t port)
    : impl_(std::make_unique<Impl>(service)) {
    impl_->host = host;
    impl_->routes();
    if (port == 0) {
        impl_->port = impl_->server.bind_to_any_port(host);
        if (impl_->port <= 0) throw Error(ErrorCode::PortUnavailable, "cannot bind " + host, host);
    } else {
        if (!impl_->server.bind_to_port(host, port))
            throw Error(ErrorCode::PortUnavailable, "port " + std::to_string(port) + " is unavailable",
                        std::to_string(port));
        impl_->port = port;
    }
}

ServiceHttpServer::~ServiceHttpServer() { stop(); }

std::uint16_t ServiceHttpServer::port() const noexcept { return static_cast<std::uint16_t>(impl_->port); }

std::string ServiceHttpServer::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

void ServiceHttpServer::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
}

void ServiceHttpServer::run() { impl_->server.listen_after_bind(); }

void ServiceHttpServer::stop() {
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace skillflow
