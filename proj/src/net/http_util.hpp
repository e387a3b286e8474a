#pragma once

#include <string>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "skillflow/error.hpp"

namespace skillflow::net {

int http_status(ErrorCode code) noexcept;

void send_json(httplib::Response& res, int status, const nlohmann::json& body);
void send_error(httplib::Response& res, const Error& e);
void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message);

/// Parses the request body as JSON; throws Error(ParseError).
nlohmann::json body_json(const httplib::Request& req);

/// Splits "http://host:port/path" into origin and path.
std::pair<std::string, std::string> split_url(const std::string& url);

/// Rebuilds an Error from a JSON error response.
[[noreturn]] void throw_from_response(const httplib::Result& res, const std::string& what);

/// Sockets without SO_REUSEPORT, so a taken port is reported instead of shared.
void exclusive_socket_options(socket_t sock);

} // namespace skillflow::net
