#include "skillflow/value.hpp"

#include <charconv>
#include <cmath>

#include "skillflow/error.hpp"

namespace skillflow {

std::string_view to_string(Datatype type) noexcept {
    switch (type) {
    case Datatype::Integer: return "integer";
    case Datatype::Real: return "real";
    case Datatype::Boolean: return "boolean";
    case Datatype::String: return "string";
    }
    return "string";
}

std::optional<Datatype> parse_datatype(std::string_view text) noexcept {
    if (text == "integer") return Datatype::Integer;
    if (text == "real") return Datatype::Real;
    if (text == "boolean") return Datatype::Boolean;
    if (text == "string") return Datatype::String;
    return std::nullopt;
}

Datatype Value::type() const noexcept {
    switch (v_.index()) {
    case 0: return Datatype::Integer;
    case 1: return Datatype::Real;
    case 2: return Datatype::Boolean;
    default: return Datatype::String;
    }
}

double Value::as_real() const {
    if (auto* i = std::get_if<std::int64_t>(&v_)) return static_cast<double>(*i);
    return std::get<double>(v_);
}

namespace {

std::string format_real(double d) {
    if (std::isnan(d)) return "nan";
    if (std::isinf(d)) return d > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, d);
    std::string out(buf, end);
    // Keep a decimal point so the text reads back as a real.
    if (out.find_first_of(".eE") == std::string::npos) out += ".0";
    return out;
}

} // namespace

std::string display(const Value& value) {
    switch (value.type()) {
    case Datatype::Integer: return std::to_string(value.as_integer());
    case Datatype::Real: return format_real(value.as_real());
    case Datatype::Boolean: return value.as_boolean() ? "true" : "false";
    case Datatype::String: return value.as_string();
    }
    return {};
}

bool conforms(const Value& value, Datatype type) noexcept {
    return value.type() == type || (type == Datatype::Real && value.type() == Datatype::Integer);
}

Value coerce(const Value& value, Datatype type) {
    if (value.type() == type) return value;
    if (type == Datatype::Real && value.type() == Datatype::Integer) return Value(value.as_real());
    throw Error(ErrorCode::DatatypeMismatch,
                "expected " + std::string(to_string(type)) + ", got " +
                    std::string(to_string(value.type())));
}

nlohmann::json to_json(const Value& value) {
    return std::visit([](const auto& v) { return nlohmann::json(v); }, value.storage());
}

Value value_from_json(const nlohmann::json& j) {
    if (j.is_boolean()) return Value(j.get<bool>());
    if (j.is_number_integer()) return Value(j.get<std::int64_t>());
    if (j.is_number_float()) return Value(j.get<double>());
    if (j.is_string()) return Value(j.get<std::string>());
    throw Error(ErrorCode::DatatypeMismatch, "unsupported JSON value: " + j.dump());
}

nlohmann::json to_json(const VariableMap& vars) {
    auto out = nlohmann::json::object();
    for (const auto& [name, value] : vars) out[name] = to_json(value);
    return out;
}

VariableMap variables_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "expected a JSON object of variables");
    VariableMap out;
    for (const auto& [name, value] : j.items()) out.emplace(name, value_from_json(value));
    return out;
}

} // namespace skillflow
