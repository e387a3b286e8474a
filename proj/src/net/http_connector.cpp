#include "skillflow/http_connector.hpp"

#include "http_util.hpp"

namespace skillflow {

using nlohmann::json;

namespace {

httplib::Client client_for(const std::string& origin, std::chrono::milliseconds read_timeout) {
    httplib::Client c(origin);
    c.set_connection_timeout(std::chrono::seconds(2));
    c.set_read_timeout(read_timeout);
    c.set_write_timeout(std::chrono::seconds(5));
    return c;
}

std::string skill_path(const Skill& skill, std::string_view prefix, std::string_view suffix) {
    return std::string(prefix) + "/skills/" + skill.interface.skill_id +
           std::string(suffix);
}

json parse_body(const httplib::Result& res, const std::string& what) {
    try {
        return json::parse(res->body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::TransportError, what + ": malformed response: " + e.what());
    }
}

} // namespace

void HttpConnector::set_parameters(const Skill& skill, const VariableMap& values) {
    auto [origin, prefix] = net::split_url(skill.interface.base_url);
    auto c = client_for(origin, timeout_);
    auto res = c.Put(skill_path(skill, prefix, "/parameters"), to_json(values).dump(), "application/json");
    if (!res || res->status != 204) net::throw_from_response(res, "set parameters of " + skill.iri);
}

SkillState HttpConnector::invoke(const Skill& skill, TransitionCommand command) {
    auto [origin, prefix] = net::split_url(skill.interface.base_url);
    auto c = client_for(origin, timeout_);
    std::string cmd(to_string(command));
    for (auto& ch : cmd) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    auto res = c.Post(skill_path(skill, prefix, "/transitions/" + cmd), "", "application/json");
    std::string what = std::string(to_string(command)) + " " + skill.iri;
    if (!res || res->status != 202) net::throw_from_response(res, what);
    auto state = parse_skill_state(parse_body(res, what).value("state", ""));
    if (!state) throw Error(ErrorCode::TransportError, what + ": unknown state in response");
    return *state;
}

SkillStatus HttpConnector::status(const Skill& skill) {
    auto [origin, prefix] = net::split_url(skill.interface.base_url);
    auto c = client_for(origin, timeout_);
    auto res = c.Get(skill_path(skill, prefix, "/state"));
    std::string what = "read state of " + skill.iri;
    if (!res || res->status != 200) net::throw_from_response(res, what);
    json body = parse_body(res, what);
    auto state = parse_skill_state(body.value("state", ""));
    if (!state) throw Error(ErrorCode::TransportError, what + ": unknown state in response");
    return {*state, body.value("seq", std::uint64_t{0}), variables_from_json(body.value("outputs", json::object()))};
}

std::vector<StateEvent> HttpConnector::poll_events(const Skill& skill, std::uint64_t since,
                                                   std::chrono::milliseconds timeout) {
    auto [origin, prefix] = net::split_url(skill.interface.base_url);
    auto c = client_for(origin, timeout + timeout_);
    auto res = c.Get(skill_path(skill, prefix, "/events") + "?since=" + std::to_string(since) +
                     "&timeoutMs=" + std::to_string(timeout.count()));
    std::string what = "poll events of " + skill.iri;
    if (!res || res->status != 200) net::throw_from_response(res, what);
    std::vector<StateEvent> out;
    for (const auto& e : parse_body(res, what)) {
        auto state = parse_skill_state(e.value("state", ""));
        if (!state) throw Error(ErrorCode::TransportError, what + ": unknown state in response");
        out.push_back({e.value("seq", std::uint64_t{0}), *state});
    }
    return out;
}

void HttpConnector::inject_failure(const Skill& skill, const FailureInjection& injection) {
    auto [origin, prefix] = net::split_url(skill.interface.base_url);
    auto c = client_for(origin, timeout_);
    json body{{"mode", to_string(injection.mode)},
              {"phase", to_string(injection.phase)},
              {"oneShot", injection.one_shot}};
    auto res = c.Post(skill_path(skill, prefix, "/inject"), body.dump(), "application/json");
    if (!res || res->status != 204) net::throw_from_response(res, "inject failure into " + skill.iri);
}

WebhookSink::WebhookSink(std::string url) {
    auto [origin, path] = net::split_url(url);
    origin_ = std::move(origin);
    path_ = path.empty() ? "/" : std::move(path);
}

void WebhookSink::deliver(const NotificationRecord& record) {
    httplib::Client c(origin_);
    c.set_connection_timeout(std::chrono::seconds(2));
    c.set_read_timeout(std::chrono::seconds(5));
    json body{{"subject", record.subject}, {"body", record.body}, {"instanceId", record.instance_id}};
    auto res = c.Post(path_, body.dump(), "application/json");
    if (!res) throw Error(ErrorCode::TransportError, "webhook " + origin_ + path_ + ": " + httplib::to_string(res.error()));
    if (res->status >= 300)
        throw Error(ErrorCode::TransportError, "webhook " + origin_ + path_ + ": HTTP " + std::to_string(res->status));
}

} // namespace skillflow
