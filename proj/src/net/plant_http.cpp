#include "skillflow/plant_http.hpp"

#include <thread>

#include "http_util.hpp"

namespace skillflow {

using nlohmann::json;

namespace {

constexpr std::size_t kWorkerThreads = 32;
constexpr long kMaxPollMs = 30000;

template <typename F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const Error& e) {
        net::send_error(res, e);
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

} // namespace

struct PlantServer::Impl {
    std::shared_ptr<VirtualModule> module;
    httplib::Server server;
    std::string host;
    int port = 0;
    std::thread thread;

    void routes() {
        server.new_task_queue = [] { return new httplib::ThreadPool(kWorkerThreads); };
        server.set_socket_options(net::exclusive_socket_options);

        server.Get("/skills", [this](const httplib::Request&, httplib::Response& res) {
            net::send_json(res, 200, module->skill_ids());
        });
        server.Put(R"(/skills/([^/]+)/parameters)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                module->set_parameters(req.matches[1].str(), variables_from_json(net::body_json(req)));
                res.status = 204;
            });
        });
        server.Post(R"(/skills/([^/]+)/transitions/([^/]+))",
                    [this](const httplib::Request& req, httplib::Response& res) {
                        guarded(res, [&] {
                            auto cmd = parse_command(req.matches[2].str());
                            if (!cmd)
                                throw Error(ErrorCode::ParseError, "unknown command " + req.matches[2].str());
                            SkillState s = module->invoke_transition(req.matches[1].str(), *cmd);
                            net::send_json(res, 202, {{"state", to_string(s)}});
                        });
                    });
        server.Get(R"(/skills/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto rec = module->get_state(req.matches[1].str());
                net::send_json(res, 200,
                               {{"state", to_string(rec.state)},
                                {"seq", rec.seq},
                                {"outputs", to_json(rec.outputs)},
                                {"parameters", to_json(rec.parameters)}});
            });
        });
        server.Get(R"(/skills/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto since = query_u64(req, "since", 0);
                auto timeout = std::min<long>(static_cast<long>(query_u64(req, "timeoutMs", 0)), kMaxPollMs);
                json out = json::array();
                for (const auto& e :
                     module->poll_events(req.matches[1].str(), since, std::chrono::milliseconds(timeout)))
                    out.push_back({{"seq", e.seq}, {"state", to_string(e.state)}});
                net::send_json(res, 200, out);
            });
        });
        server.Post(R"(/skills/([^/]+)/inject)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                json body = net::body_json(req);
                auto mode = parse_failure_mode(body.value("mode", "abort"));
                auto phase = parse_failure_phase(body.value("phase", "duringExecute"));
                if (!mode || !phase) throw Error(ErrorCode::ParseError, "bad failure injection");
                module->inject_failure(req.matches[1].str(), {*mode, *phase, body.value("oneShot", true)});
                res.status = 204;
            });
        });
    }
};

PlantServer::PlantServer(std::shared_ptr<VirtualModule> module, const std::string& host, std::uint16_t port)
    : impl_(std::make_unique<Impl>()) {
    impl_->module = std::move(module);
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
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
}

PlantServer::~PlantServer() { stop(); }

void PlantServer::stop() {
    if (!impl_->thread.joinable()) return;
    impl_->server.stop();
    impl_->thread.join();
}

std::uint16_t PlantServer::port() const noexcept { return static_cast<std::uint16_t>(impl_->port); }

std::string PlantServer::base_url() const { return "http://" + impl_->host + ":" + std::to_string(impl_->port); }

MachineDefinition ModuleHandle::descriptor() const {
    MachineDefinition m = module->machine();
    for (auto& s : m.skills) {
        if (server) {
            s.interface.transport = Transport::Http;
            s.interface.base_url = server->base_url();
        } else {
            s.interface.transport = Transport::InProcess;
            s.interface.base_url.clear();
        }
    }
    return m;
}

ModuleHandle spawn_module(VirtualModuleConfig config, bool serve_http) {
    std::string host = config.host;
    std::uint16_t port = config.port;
    ModuleHandle h;
    h.module = std::make_shared<VirtualModule>(std::move(config));
    if (serve_http) h.server = std::make_unique<PlantServer>(h.module, host, port);
    return h;
}

} // namespace skillflow
