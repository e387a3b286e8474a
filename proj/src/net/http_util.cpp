#include "http_util.hpp"

namespace skillflow::net {

using nlohmann::json;

int http_status(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::UnknownIri:
    case ErrorCode::UnknownSkill:
    case ErrorCode::UnknownInstance:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::DuplicateIri:
    case ErrorCode::WrongState:
    case ErrorCode::IllegalTransition:
    case ErrorCode::NoSkillAvailable:
    case ErrorCode::AmbiguousCapability:
    case ErrorCode::UnknownPendingTask:
    case ErrorCode::NotACandidate:
    case ErrorCode::UnlinkedProperty:
    case ErrorCode::PlanIncomplete:
    case ErrorCode::NoOpenWorkItem:
    case ErrorCode::AlreadyEnded: return 409;
    case ErrorCode::StorageError: return 500;
    case ErrorCode::TransportError: return 502;
    default: return 400;
    }
}

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    json body{{"error", to_string(e.code())}, {"message", e.what()}};
    if (!e.subject().empty()) body["subject"] = e.subject();
    send_json(res, http_status(e.code()), body);
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
    send_json(res, status, {{"error", code}, {"message", message}});
}

json body_json(const httplib::Request& req) {
    try {
        return json::parse(req.body);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("request body is not JSON: ") + e.what());
    }
}

std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "not an absolute URL: " + url, url);
    auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, ""};
    std::string path = url.substr(slash);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {url.substr(0, slash), path};
}

void throw_from_response(const httplib::Result& res, const std::string& what) {
    if (!res) throw Error(ErrorCode::TransportError, what + ": " + httplib::to_string(res.error()));
    ErrorCode code = ErrorCode::TransportError;
    std::string message = what + ": HTTP " + std::to_string(res->status);
    std::string subject;
    try {
        auto body = json::parse(res->body);
        if (auto c = parse_error_code(body.value("error", ""))) code = *c;
        message = body.value("message", message);
        subject = body.value("subject", "");
    } catch (const json::exception&) {
    }
    throw Error(code, message, subject);
}

void exclusive_socket_options(socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
}

} // namespace skillflow::net
