#pragma once

#include <concepts>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "json.hpp"

namespace skillflow {

enum class Datatype { Integer, Real, Boolean, String };

std::string_view to_string(Datatype type) noexcept;
std::optional<Datatype> parse_datatype(std::string_view text) noexcept;

/// A typed scalar as it flows through properties, skill variables and
/// process variables. Equality is type-strict: integer 3 != real 3.0.
class Value {
public:
    using Storage = std::variant<std::int64_t, double, bool, std::string>;

    Value() : v_(std::int64_t{0}) {}
    template <std::integral T>
        requires(!std::same_as<T, bool>)
    Value(T v) : v_(static_cast<std::int64_t>(v)) {}
    Value(bool v) : v_(v) {}
    Value(double v) : v_(v) {}
    Value(std::string v) : v_(std::move(v)) {}
    Value(std::string_view v) : v_(std::string(v)) {}
    Value(const char* v) : v_(std::string(v)) {}

    Datatype type() const noexcept;
    bool is_numeric() const noexcept { return type() == Datatype::Integer || type() == Datatype::Real; }

    std::int64_t as_integer() const { return std::get<std::int64_t>(v_); }
    /// Integers promote to real.
    double as_real() const;
    bool as_boolean() const { return std::get<bool>(v_); }
    const std::string& as_string() const { return std::get<std::string>(v_); }

    const Storage& storage() const noexcept { return v_; }

    bool operator==(const Value&) const = default;

private:
    Storage v_;
};

using VariableMap = std::map<std::string, Value>;

/// Human-readable form used in templates and CLI output; reals use the
/// shortest representation that round-trips.
std::string display(const Value& value);

/// True when `value` may be stored into a slot of `type` (integer widens to real).
bool conforms(const Value& value, Datatype type) noexcept;

/// Converts to `type` under the widening rule; throws DatatypeMismatch otherwise.
Value coerce(const Value& value, Datatype type);

nlohmann::json to_json(const Value& value);
Value value_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VariableMap& vars);
VariableMap variables_from_json(const nlohmann::json& j);

} // namespace skillflow
