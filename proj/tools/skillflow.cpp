// Command line entry point: runs the service or the virtual plant, and acts
// as a thin HTTP client for everything else.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "skillflow/connector.hpp"
#include "skillflow/error.hpp"
#include "skillflow/http_connector.hpp"
#include "skillflow/plant_http.hpp"
#include "skillflow/service.hpp"
#include "skillflow/service_http.hpp"

using namespace skillflow;
using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void wait_for_signal() {
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot read " + path, path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// "k=v" pairs; values that parse as JSON scalars keep their type.
VariableMap parse_assignments(const std::vector<std::string>& items) {
    json obj = json::object();
    for (const auto& item : items) {
        auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::ParseError, "expected k=v, got " + item, item);
        std::string key = item.substr(0, eq), raw = item.substr(eq + 1);
        json value = raw;
        try {
            json parsed = json::parse(raw);
            if (parsed.is_primitive() && !parsed.is_null()) value = parsed;
        } catch (const json::exception&) {
        }
        obj[key] = value;
    }
    return variables_from_json(obj);
}

class Client {
public:
    explicit Client(const std::string& url) {
        auto scheme = url.find("://");
        auto slash = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
        origin_ = slash == std::string::npos ? url : url.substr(0, slash);
        http_ = std::make_unique<httplib::Client>(origin_);
        http_->set_read_timeout(60, 0);
    }

    json get(const std::string& path) { return check(http_->Get(path), path); }
    json post(const std::string& path, const json& body) {
        return check(http_->Post(path, body.dump(), "application/json"), path);
    }
    json post_raw(const std::string& path, const std::string& body, const std::string& type) {
        return check(http_->Post(path, body, type), path);
    }
    json del(const std::string& path) { return check(http_->Delete(path), path); }

private:
    json check(const httplib::Result& res, const std::string& path) {
        if (!res) throw Error(ErrorCode::TransportError, origin_ + path + ": " + httplib::to_string(res.error()));
        json body = json::object();
        if (!res->body.empty()) {
            try {
                body = json::parse(res->body);
            } catch (const json::exception&) {
                body = res->body;
            }
        }
        if (res->status >= 400) {
            std::string msg = body.is_object() ? body.value("message", res->body) : res->body;
            auto code = body.is_object() ? parse_error_code(body.value("error", "")) : std::nullopt;
            if (body.is_object() && body.contains("diagnostics"))
                for (const auto& d : body["diagnostics"])
                    std::cerr << "  " << d.value("kind", "") << " at " << d.value("element", "") << ": "
                              << d.value("message", "") << "\n";
            throw Error(code.value_or(ErrorCode::TransportError), msg);
        }
        return body;
    }

    std::string origin_;
    std::unique_ptr<httplib::Client> http_;
};

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::string url_encode_path(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == ':' || c == '~') {
            out += static_cast<char>(c);
        } else {
            char buf[4];
            std::snprintf(buf, sizeof buf, "%%%02X", c);
            out += buf;
        }
    }
    return out;
}

int serve(const std::string& config_path, const std::string& plant_path) {
    ServiceConfig cfg = load_service_config(config_path);
    auto in_process = std::make_shared<InProcessConnector>();
    auto connector = std::make_shared<RoutingConnector>(in_process, std::make_shared<HttpConnector>());
    std::vector<ModuleHandle> modules;
    if (!plant_path.empty())
        for (auto& m : load_plant_config(read_file(plant_path))) {
            modules.push_back(spawn_module(std::move(m), false));
            in_process->attach(modules.back().module);
        }
    Service service(cfg, std::make_shared<FileStorage>(cfg.data_dir), connector);
    for (const auto& h : modules) {
        auto desc = h.descriptor();
        if (!service.registry()->find_machine(desc.iri)) service.register_machine(desc);
    }
    ServiceHttpServer server(service, cfg.host, cfg.port);
    server.start();
    std::cerr << "skillflow service listening on " << server.base_url() << " (data in " << cfg.data_dir << ")"
              << std::endl;
    wait_for_signal();
    server.stop();
    return 0;
}

int plant_up(const std::string& path, const std::string& host, bool do_register, Client& client) {
    std::vector<ModuleHandle> handles;
    for (auto& cfg : load_plant_config(read_file(path))) {
        if (!host.empty()) cfg.host = host;
        handles.push_back(spawn_module(std::move(cfg), true));
        std::cerr << handles.back().module->machine().iri << " on " << handles.back().server->base_url() << std::endl;
    }
    if (do_register)
        for (const auto& h : handles) {
            auto iri = h.module->machine().iri;
            try {
                client.del("/registry/machines/" + url_encode_path(iri));
            } catch (const Error& e) {
                if (e.code() != ErrorCode::UnknownIri) throw;
            }
            client.post("/registry/machines", to_json(h.descriptor()));
        }
    wait_for_signal();
    for (auto& h : handles) h.server->stop();
    return 0;
}

int plant_inject(Client& client, const std::string& skill_iri, const std::string& mode, const std::string& phase,
                 bool persistent) {
    auto fm = parse_failure_mode(mode);
    auto fp = parse_failure_phase(phase);
    if (!fm || !fp) throw Error(ErrorCode::ParseError, "bad --mode or --phase");
    for (const auto& m : client.get("/registry/machines")) {
        MachineDefinition def = machine_from_json(m);
        for (const auto& s : def.skills) {
            if (s.iri != skill_iri) continue;
            if (s.interface.transport != Transport::Http)
                throw Error(ErrorCode::ConfigError, skill_iri + " is not served over HTTP", skill_iri);
            HttpConnector(std::chrono::milliseconds(5000)).inject_failure(s, {*fm, *fp, !persistent});
            std::cout << "armed " << to_string(*fm) << " (" << to_string(*fp) << ") on " << skill_iri << std::endl;
            return 0;
        }
    }
    throw Error(ErrorCode::UnknownSkill, "no registered skill " + skill_iri, skill_iri);
}

int watch(Client& client, const std::string& id, std::uint64_t since) {
    for (;;) {
        auto events = client.get("/instances/" + id + "/events?since=" + std::to_string(since) + "&timeoutMs=20000");
        for (const auto& e : events) {
            since = e["seq"];
            std::cout << e["seq"] << " " << e["kind"].get<std::string>();
            if (!e["node"].get<std::string>().empty()) std::cout << " " << e["node"].get<std::string>();
            if (!e["payload"].empty()) std::cout << " " << e["payload"].dump();
            std::cout << std::endl;
            if (e["kind"] == "InstanceEnded") return 0;
        }
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"skillflow: capability-based process execution"};
    app.require_subcommand(1);
    const char* env_url = std::getenv("SKILLFLOW_URL");
    std::string url = env_url ? env_url : "http://127.0.0.1:8080";
    app.add_option("--url", url, "Service base URL (SKILLFLOW_URL)");

    std::string config_path, plant_path;
    auto* serve_cmd = app.add_subcommand("serve", "Run the service");
    serve_cmd->add_option("-c,--config", config_path, "JSON config file");
    serve_cmd->add_option("--plant", plant_path, "Also host these virtual modules in-process");

    std::string file;
    auto* deploy_cmd = app.add_subcommand("deploy", "Deploy a process definition");
    deploy_cmd->add_option("file", file, "BPMN XML file")->required();

    auto* registry_cmd = app.add_subcommand("registry", "Inspect or change the registry");
    registry_cmd->require_subcommand(1);
    auto* reg_ls = registry_cmd->add_subcommand("ls", "List capabilities and machines");
    std::string reg_file;
    auto* reg_add = registry_cmd->add_subcommand("add", "Register a machine or a whole registry document");
    reg_add->add_option("file", reg_file, "JSON file")->required();
    std::string reg_iri;
    auto* reg_rm = registry_cmd->add_subcommand("rm", "Unregister a machine");
    reg_rm->add_option("iri", reg_iri, "Machine IRI")->required();

    std::string def_id, policy = "Interactive";
    auto* resolve_cmd = app.add_subcommand("resolve", "Open a resolution session");
    resolve_cmd->add_option("definition", def_id, "Definition id")->required();
    resolve_cmd->add_option("--policy", policy, "AutoStrict, FirstDeterministic or Interactive");

    std::string session, task, skill;
    auto* decide_cmd = app.add_subcommand("decide", "Choose a skill for a pending task");
    decide_cmd->add_option("session", session)->required();
    decide_cmd->add_option("task", task)->required();
    decide_cmd->add_option("skill", skill)->required();

    std::vector<std::string> vars;
    auto* start_cmd = app.add_subcommand("start", "Start an instance from a complete session");
    start_cmd->add_option("session", session)->required();
    start_cmd->add_option("--var", vars, "Initial variable k=v");

    std::string instance;
    std::vector<std::string> values;
    auto* task_cmd = app.add_subcommand("task", "User tasks");
    task_cmd->require_subcommand(1);
    auto* task_complete = task_cmd->add_subcommand("complete", "Submit a user task form");
    task_complete->add_option("instance", instance)->required();
    task_complete->add_option("task", task)->required();
    task_complete->add_option("values", values, "Field values k=v");

    std::uint64_t since = 0;
    auto* watch_cmd = app.add_subcommand("watch", "Tail an instance's events until it ends");
    watch_cmd->add_option("instance", instance)->required();
    watch_cmd->add_option("--since", since, "Resume after this sequence number");

    auto* show_cmd = app.add_subcommand("show", "Print an instance snapshot");
    show_cmd->add_option("instance", instance)->required();
    auto* cancel_cmd = app.add_subcommand("cancel", "Cancel an instance");
    cancel_cmd->add_option("instance", instance)->required();

    auto* notif_cmd = app.add_subcommand("notifications", "Notification feed");
    notif_cmd->require_subcommand(1);
    auto* notif_ls = notif_cmd->add_subcommand("ls", "List notifications");

    auto* plant_cmd = app.add_subcommand("plant", "Virtual plant");
    plant_cmd->require_subcommand(1);
    std::string plant_host;
    bool do_register = false;
    auto* plant_up_cmd = plant_cmd->add_subcommand("up", "Serve virtual modules over HTTP");
    plant_up_cmd->add_option("config", plant_path, "Plant JSON")->required();
    plant_up_cmd->add_option("--host", plant_host, "Bind address override");
    plant_up_cmd->add_flag("--register", do_register, "Register the modules with the service");
    std::string mode = "abort", phase = "execute";
    bool persistent = false;
    auto* inject_cmd = plant_cmd->add_subcommand("inject", "Arm a failure on a registered HTTP skill");
    inject_cmd->add_option("skill", skill, "Skill IRI")->required();
    inject_cmd->add_option("--mode", mode, "abort or stop");
    inject_cmd->add_option("--phase", phase, "starting, execute or completing");
    inject_cmd->add_flag("--persistent", persistent, "Fail every run, not just the next");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) return serve(config_path, plant_path);
        Client client(url);
        if (*deploy_cmd) {
            print(client.post_raw("/processes", read_file(file), "application/xml"));
        } else if (*reg_ls) {
            print({{"capabilities", client.get("/registry/capabilities")}, {"machines", client.get("/registry/machines")}});
        } else if (*reg_add) {
            json doc = json::parse(read_file(reg_file));
            if (doc.contains("machines")) {
                for (const auto& c : doc.value("capabilities", json::array())) {
                    try {
                        client.post("/registry/capabilities", c);
                    } catch (const Error& e) {
                        if (e.code() != ErrorCode::DuplicateIri) throw;
                    }
                }
                for (const auto& m : doc["machines"]) print(client.post("/registry/machines", m));
            } else {
                print(client.post("/registry/machines", doc));
            }
        } else if (*reg_rm) {
            client.del("/registry/machines/" + url_encode_path(reg_iri));
        } else if (*resolve_cmd) {
            print(client.post("/processes/" + def_id + "/resolutions", {{"policy", policy}}));
        } else if (*decide_cmd) {
            print(client.post("/resolutions/" + session + "/decisions", {{"taskId", task}, {"skill", skill}}));
        } else if (*start_cmd) {
            print(client.post("/instances", {{"sessionId", session}, {"variables", to_json(parse_assignments(vars))}}));
        } else if (*task_complete) {
            client.post("/instances/" + instance + "/user-tasks/" + task + "/complete",
                        {{"values", to_json(parse_assignments(values))}});
        } else if (*watch_cmd) {
            return watch(client, instance, since);
        } else if (*show_cmd) {
            print(client.get("/instances/" + instance + "?since=0"));
        } else if (*cancel_cmd) {
            client.post("/instances/" + instance + "/cancel", json::object());
        } else if (*notif_ls) {
            print(client.get("/notifications"));
        } else if (*plant_up_cmd) {
            return plant_up(plant_path, plant_host, do_register, client);
        } else if (*inject_cmd) {
            return plant_inject(client, skill, mode, phase, persistent);
        }
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << std::endl;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
