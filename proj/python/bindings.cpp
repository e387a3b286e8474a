#include <pybind11/pybind11.h>
#include <pybind11/eval.h>
#include <pybind11/stl.h>

#include <chrono>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "skillflow/connector.hpp"
#include "skillflow/engine.hpp"
#include "skillflow/error.hpp"
#include "skillflow/expr.hpp"
#include "skillflow/http_connector.hpp"
#include "skillflow/notification.hpp"
#include "skillflow/plant.hpp"
#include "skillflow/process.hpp"
#include "skillflow/registry.hpp"
#include "skillflow/resolution.hpp"
#include "skillflow/service.hpp"
#include "skillflow/service_http.hpp"
#include "skillflow/state_machine.hpp"
#include "skillflow/storage.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace skillflow;

namespace {

// Python objects cross the boundary as JSON text; the structures are small.
py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::handle& obj) {
    return json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

VariableMap vars_from_py(const py::object& obj) {
    if (obj.is_none()) return {};
    return variables_from_json(from_py(obj));
}

json diagnostics_json(const std::vector<Diagnostic>& diagnostics) {
    json out = json::array();
    for (const auto& d : diagnostics) out.push_back(to_json(d));
    return out;
}

SkillState state_arg(const std::string& text) {
    auto s = parse_skill_state(text);
    if (!s) throw Error(ErrorCode::ParseError, "unknown skill state '" + text + "'", text);
    return *s;
}

std::string apply_py(const std::string& state, const std::string& command) {
    auto c = parse_command(command);
    if (!c) throw Error(ErrorCode::ParseError, "unknown command '" + command + "'", command);
    return std::string(to_string(apply_command(state_arg(state), *c)));
}

json binding_json(const TaskBinding& b) {
    json params = json::object();
    for (const auto& [k, v] : b.parameters) params[k] = v.source();
    return {{"skill", b.skill_iri}, {"parameters", params}, {"outputs", b.outputs}};
}

json pending_json(const PendingDecisions& p) {
    json pending = json::array();
    for (const auto& d : p.pending) {
        json candidates = json::array();
        for (const auto& c : d.candidates) candidates.push_back(c.skill_iri);
        pending.push_back({{"task", d.task_id}, {"capability", d.capability_iri}, {"candidates", candidates}});
    }
    json decided = json::object();
    for (const auto& [task, b] : p.decided) decided[task] = binding_json(b);
    return {{"definitionId", p.definition_id}, {"pending", pending}, {"decided", decided}};
}

py::object resolution_py(Resolution r) {
    if (auto* plan = std::get_if<BindingPlan>(&r)) return py::cast(std::move(*plan));
    return py::cast(std::get<PendingDecisions>(std::move(r)));
}

/// Owns the in-process plant and notification sink an Engine talks to.
struct PyEngine {
    std::shared_ptr<InProcessConnector> connector = std::make_shared<InProcessConnector>();
    std::shared_ptr<MemorySink> sink = std::make_shared<MemorySink>();
    std::vector<std::shared_ptr<VirtualModule>> modules;
    std::unique_ptr<Engine> engine;

    PyEngine(std::vector<std::shared_ptr<VirtualModule>> mods, bool autonomous) : modules(std::move(mods)) {
        for (const auto& m : modules) connector->attach(m);
        EngineOptions options;
        options.autonomous = autonomous;
        engine = std::make_unique<Engine>(connector, sink, options);
    }
};

/// Service plus its HTTP front end, serving on a background thread.
struct PyServer {
    std::vector<std::shared_ptr<VirtualModule>> modules;
    std::unique_ptr<Service> service;
    std::unique_ptr<ServiceHttpServer> http;

    PyServer(ServiceConfig cfg, std::vector<std::shared_ptr<VirtualModule>> mods) : modules(std::move(mods)) {
        auto in_process = std::make_shared<InProcessConnector>();
        for (const auto& m : modules) in_process->attach(m);
        auto connector = std::make_shared<RoutingConnector>(in_process, std::make_shared<HttpConnector>());
        service = std::make_unique<Service>(cfg, std::make_shared<FileStorage>(cfg.data_dir), connector);
        http = std::make_unique<ServiceHttpServer>(*service, cfg.host, cfg.port);
        http->start();
    }
    ~PyServer() {
        if (http) http->stop();
    }
};

constexpr const char* kErrorClass = R"(
class SkillflowError(Exception):
    """Raised for every library failure. `code` is the stable error name."""

    def __init__(self, code, message, subject=""):
        super().__init__(code, message, subject)
        self.code = code
        self.message = message
        self.subject = subject

    def __str__(self):
        return f"{self.code}: {self.message}"
)";

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Capability-based process execution over a virtual plant";

    py::dict scope;
    py::exec(kErrorClass, py::globals(), scope);
    py::object error_class = scope["SkillflowError"];
    error_class.attr("__module__") = "skillflow";
    m.attr("SkillflowError") = error_class;

    static py::handle error_handle = error_class.release();
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ValidationFailure& e) {
            py::object err = py::reinterpret_borrow<py::object>(error_handle)(
                std::string(to_string(e.code())), e.what(), e.subject());
            err.attr("diagnostics") = to_py(diagnostics_json(e.diagnostics()));
            PyErr_SetObject(error_handle.ptr(), err.ptr());
        } catch (const Error& e) {
            py::object err = py::reinterpret_borrow<py::object>(error_handle)(
                std::string(to_string(e.code())), e.what(), e.subject());
            PyErr_SetObject(error_handle.ptr(), err.ptr());
        }
    });

    // values and expressions
    m.def(
        "evaluate",
        [](const std::string& text, const py::object& variables) {
            return to_py(to_json(parse_value_expr(text).evaluate(vars_from_py(variables))));
        },
        py::arg("text"), py::arg("variables") = py::none(),
        "Evaluates a constant or `${...}` expression against a variable dict.");
    m.def(
        "render_template",
        [](const std::string& text, const py::object& variables) {
            return render_template(text, vars_from_py(variables));
        },
        py::arg("text"), py::arg("variables") = py::none());

    // skill state machine
    m.def("apply_command", &apply_py, py::arg("state"), py::arg("command"),
          "Returns the state entered when `command` is issued in `state`.");
    m.def(
        "complete_acting", [](const std::string& state) { return std::string(to_string(complete_acting(state_arg(state)))); },
        py::arg("state"));
    m.def("is_acting", [](const std::string& state) { return is_acting(state_arg(state)); }, py::arg("state"));

    // registry
    py::class_<Registry>(m, "Registry")
        .def(py::init<>())
        .def("to_dict", [](const Registry& r) { return to_py(to_json(r)); })
        .def("add_capability", [](Registry& r, const py::object& c) { r.add_capability(capability_from_json(from_py(c))); })
        .def("register_machine", [](Registry& r, const py::object& md) { r.register_machine(machine_from_json(from_py(md))); })
        .def("unregister_machine", &Registry::unregister_machine, py::arg("iri"))
        .def("skills_for_capability",
             [](const Registry& r, const std::string& iri) {
                 std::vector<std::string> out;
                 for (const auto& s : r.skills_for_capability(iri)) out.push_back(s.iri);
                 return out;
             })
        .def_property_readonly("skill_iris", [](const Registry& r) {
            std::vector<std::string> out;
            for (const auto& [iri, _] : r.skills()) out.push_back(iri);
            return out;
        });
    m.def("load_registry", [](const std::string& doc) { return load_registry(doc); }, py::arg("document"));

    // process model
    py::class_<ProcessDefinition>(m, "Process")
        .def_readonly("id", &ProcessDefinition::id)
        .def_readonly("name", &ProcessDefinition::name)
        .def_property_readonly("node_ids",
                               [](const ProcessDefinition& p) {
                                   std::vector<std::string> out;
                                   for (const auto& n : p.nodes) out.push_back(n.id);
                                   return out;
                               })
        .def("serialize", &serialize_process)
        .def(
            "validate",
            [](const ProcessDefinition& p, const Registry* r) { return to_py(diagnostics_json(validate_process(p, r))); },
            py::arg("registry") = nullptr);
    m.def("parse_process", [](const std::string& xml) { return parse_process(xml); }, py::arg("xml"));

    // resolution
    py::class_<BindingPlan>(m, "BindingPlan")
        .def_readonly("definition_id", &BindingPlan::definition_id)
        .def("to_dict", [](const BindingPlan& p) { return to_py(to_json(p)); })
        .def_static("from_dict", [](const py::object& d) { return plan_from_json(from_py(d)); })
        .def("skill_for", [](const BindingPlan& p, const std::string& task) { return p.bindings.at(task).skill_iri; })
        .def("__eq__", [](const BindingPlan& a, const BindingPlan& b) { return a == b; });
    py::class_<PendingDecisions>(m, "PendingDecisions")
        .def_readonly("definition_id", &PendingDecisions::definition_id)
        .def("to_dict", [](const PendingDecisions& p) { return to_py(pending_json(p)); })
        .def_property_readonly("tasks", [](const PendingDecisions& p) {
            std::vector<std::string> out;
            for (const auto& d : p.pending) out.push_back(d.task_id);
            return out;
        });
    m.def(
        "resolve",
        [](const ProcessDefinition& p, const Registry& r, const std::string& policy) {
            auto pol = parse_policy(policy);
            if (!pol) throw Error(ErrorCode::ParseError, "unknown selection policy '" + policy + "'", policy);
            return resolution_py(resolve(p, r, *pol));
        },
        py::arg("process"), py::arg("registry"), py::arg("policy") = "AutoStrict",
        "Returns a BindingPlan, or PendingDecisions for the Interactive policy.");
    m.def(
        "decide",
        [](const PendingDecisions& p, const std::string& task, const std::string& skill) {
            return resolution_py(decide(p, task, skill));
        },
        py::arg("pending"), py::arg("task_id"), py::arg("skill_iri"));
    m.def(
        "validate_plan",
        [](const BindingPlan& plan, const ProcessDefinition& p, const Registry& r) {
            return to_py(diagnostics_json(validate_plan(plan, p, r)));
        },
        py::arg("plan"), py::arg("process"), py::arg("registry"));

    // virtual plant
    py::class_<VirtualModule, std::shared_ptr<VirtualModule>>(m, "VirtualModule")
        .def(py::init([](const py::object& cfg) { return std::make_shared<VirtualModule>(module_config_from_json(from_py(cfg))); }),
             py::arg("config"))
        .def_property_readonly("machine_iri", [](const VirtualModule& v) { return v.machine().iri; })
        .def_property_readonly("skill_ids", &VirtualModule::skill_ids)
        .def("state", [](const VirtualModule& v, const std::string& id) { return std::string(to_string(v.get_state(id).state)); })
        .def("outputs", [](const VirtualModule& v, const std::string& id) { return to_py(to_json(v.get_state(id).outputs)); })
        .def("set_parameters",
             [](VirtualModule& v, const std::string& id, const py::object& values) { v.set_parameters(id, vars_from_py(values)); })
        .def("invoke",
             [](VirtualModule& v, const std::string& id, const std::string& command) {
                 auto c = parse_command(command);
                 if (!c) throw Error(ErrorCode::ParseError, "unknown command '" + command + "'", command);
                 return std::string(to_string(v.invoke_transition(id, *c)));
             })
        .def(
            "inject_failure",
            [](VirtualModule& v, const std::string& id, const std::string& mode, const std::string& phase, bool one_shot) {
                auto fm = parse_failure_mode(mode);
                auto fp = parse_failure_phase(phase);
                if (!fm || !fp) throw Error(ErrorCode::ParseError, "unknown failure mode or phase");
                v.inject_failure(id, {*fm, *fp, one_shot});
            },
            py::arg("skill_id"), py::arg("mode") = "Abort", py::arg("phase") = "Execute", py::arg("one_shot") = true)
        .def("states",
             [](const VirtualModule& v, const std::string& id) {
                 std::vector<std::string> out;
                 for (const auto& e : v.events(id)) out.emplace_back(to_string(e.state));
                 return out;
             })
        .def("invocations", [](const VirtualModule& v, const std::string& id) {
            py::list out;
            for (const auto& r : v.invocations(id))
                out.append(py::make_tuple(std::string(to_string(r.command)), to_py(to_json(r.parameters))));
            return out;
        });
    m.def(
        "load_plant",
        [](const std::string& doc) {
            std::vector<std::shared_ptr<VirtualModule>> out;
            for (auto& cfg : load_plant_config(doc)) out.push_back(std::make_shared<VirtualModule>(std::move(cfg)));
            return out;
        },
        py::arg("document"), "Builds every module of a plant document.");

    // engine
    py::class_<PyEngine>(m, "Engine")
        .def(py::init<std::vector<std::shared_ptr<VirtualModule>>, bool>(), py::arg("modules"),
             py::arg("autonomous") = true)
        .def(
            "start",
            [](PyEngine& e, const ProcessDefinition& p, const BindingPlan& plan, const Registry& r,
               const py::object& variables) {
                auto vars = vars_from_py(variables);
                py::gil_scoped_release release;
                return e.engine->start_instance(p, plan, r, vars);
            },
            py::arg("process"), py::arg("plan"), py::arg("registry"), py::arg("variables") = py::none())
        .def(
            "complete_user_task",
            [](PyEngine& e, const std::string& id, const std::string& task, const py::object& values) {
                auto vars = vars_from_py(values);
                py::gil_scoped_release release;
                e.engine->complete_user_task(id, task, vars);
            },
            py::arg("instance_id"), py::arg("task_id"), py::arg("values") = py::none())
        .def("fire_timer",
             [](PyEngine& e, const std::string& id, const std::string& node) {
                 py::gil_scoped_release release;
                 e.engine->fire_timer(id, node);
             })
        .def("cancel",
             [](PyEngine& e, const std::string& id) {
                 py::gil_scoped_release release;
                 e.engine->cancel_instance(id);
             })
        .def("run_deferred",
             [](PyEngine& e) {
                 py::gil_scoped_release release;
                 e.engine->run_deferred();
             })
        .def(
            "snapshot",
            [](const PyEngine& e, const std::string& id, std::uint64_t since) {
                return to_py(to_json(e.engine->snapshot(id, since)));
            },
            py::arg("instance_id"), py::arg("since") = 0)
        .def(
            "wait_until_ended",
            [](const PyEngine& e, const std::string& id, double timeout_s) {
                py::gil_scoped_release release;
                return e.engine->wait_for(
                    id, [](const InstanceView& v) { return is_ended(v.status); },
                    std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000)));
            },
            py::arg("instance_id"), py::arg("timeout") = 10.0)
        .def(
            "wait_for_status",
            [](const PyEngine& e, const std::string& id, const std::string& status, double timeout_s) {
                auto want = parse_instance_status(status);
                if (!want) throw Error(ErrorCode::ParseError, "unknown instance status '" + status + "'", status);
                py::gil_scoped_release release;
                return e.engine->wait_for(
                    id, [&](const InstanceView& v) { return v.status == *want; },
                    std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000)));
            },
            py::arg("instance_id"), py::arg("status"), py::arg("timeout") = 10.0)
        .def_property_readonly("instance_ids", [](const PyEngine& e) { return e.engine->instance_ids(); })
        .def("notifications", [](const PyEngine& e) {
            json out = json::array();
            for (const auto& n : e.engine->notifications()) out.push_back(to_json(n));
            return to_py(out);
        });

    // service
    py::class_<PyServer>(m, "Server")
        .def(py::init([](const std::string& data_dir, const std::string& registry_file,
                         std::vector<std::shared_ptr<VirtualModule>> modules, const std::string& host,
                         std::uint16_t port, const std::string& notification_sink) {
                 ServiceConfig cfg;
                 cfg.data_dir = data_dir;
                 cfg.registry_file = registry_file;
                 cfg.host = host;
                 cfg.port = port;
                 cfg.notification_sink = notification_sink;
                 return std::make_unique<PyServer>(cfg, std::move(modules));
             }),
             py::arg("data_dir"), py::arg("registry_file") = "", py::arg("modules") = std::vector<std::shared_ptr<VirtualModule>>{},
             py::arg("host") = "127.0.0.1", py::arg("port") = 0, py::arg("notification_sink") = "file",
             "Starts the HTTP service on a background thread; port 0 picks a free port.")
        .def_property_readonly("port", [](const PyServer& s) { return s.http->port(); })
        .def_property_readonly("base_url", [](const PyServer& s) { return s.http->base_url(); })
        .def("stop", [](PyServer& s) {
            py::gil_scoped_release release;
            if (s.http) s.http->stop();
        });
}
