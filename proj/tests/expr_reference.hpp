#pragma once

// Reference interpreter for the expression language plus a random tree
// generator, shared by the unit tests and the acceptance run.

#include <cstdint>
#include <limits>
#include <string>
#include <variant>

#include "skillflow/error.hpp"
#include "skillflow/expr.hpp"
#include "support.hpp"

namespace exprref {

using namespace skillflow;
using namespace skillflow::expr;


// Reference interpreter: a separate recursive evaluator working on its own
// result type, with overflow detected through 128-bit arithmetic instead of
// compiler builtins.
struct RefError {
    ErrorCode code;
};
using RefValue = std::variant<std::int64_t, double, bool, std::string>;
using RefResult = std::variant<RefValue, RefError>;

inline bool fits(__int128 v) {
    return v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max();
}

inline RefValue from_value(const Value& v) {
    switch (v.type()) {
    case Datatype::Integer: return v.as_integer();
    case Datatype::Real: return std::get<double>(v.storage());
    case Datatype::Boolean: return v.as_boolean();
    case Datatype::String: return v.as_string();
    }
    return std::int64_t{0};
}

inline bool is_num(const RefValue& v) { return v.index() == 0 || v.index() == 1; }
inline double to_d(const RefValue& v) {
    return v.index() == 0 ? static_cast<double>(std::get<0>(v)) : std::get<1>(v);
}

inline RefResult ref_eval(const Node& n, const VariableMap& vars) {
    if (auto* lit = std::get_if<Literal>(&n.kind)) return from_value(lit->value);
    if (auto* var = std::get_if<VariableRef>(&n.kind)) {
        auto it = vars.find(var->name);
        if (it == vars.end()) return RefError{ErrorCode::UnknownVariable};
        return from_value(it->second);
    }
    if (auto* u = std::get_if<Unary>(&n.kind)) {
        RefResult r = ref_eval(*u->operand, vars);
        if (r.index() == 1) return r;
        const RefValue& v = std::get<0>(r);
        if (u->op == UnaryOp::Not) {
            if (v.index() != 2) return RefError{ErrorCode::TypeError};
            return RefValue(!std::get<bool>(v));
        }
        if (v.index() == 0) {
            __int128 x = -static_cast<__int128>(std::get<0>(v));
            if (!fits(x)) return RefError{ErrorCode::Overflow};
            return RefValue(static_cast<std::int64_t>(x));
        }
        if (v.index() == 1) return RefValue(-std::get<1>(v));
        return RefError{ErrorCode::TypeError};
    }
    const auto& b = std::get<Binary>(n.kind);
    RefResult lr = ref_eval(*b.lhs, vars);
    if (lr.index() == 1) return lr;
    RefResult rr = ref_eval(*b.rhs, vars);
    if (rr.index() == 1) return rr;
    const RefValue& a = std::get<0>(lr);
    const RefValue& c = std::get<0>(rr);
    switch (b.op) {
    case BinaryOp::And:
    case BinaryOp::Or:
        if (a.index() != 2 || c.index() != 2) return RefError{ErrorCode::TypeError};
        return RefValue(b.op == BinaryOp::And ? (std::get<bool>(a) && std::get<bool>(c))
                                              : (std::get<bool>(a) || std::get<bool>(c)));
    case BinaryOp::Add:
    case BinaryOp::Sub:
    case BinaryOp::Mul:
    case BinaryOp::Div: {
        if (b.op == BinaryOp::Add && a.index() == 3 && c.index() == 3)
            return RefValue(std::get<3>(a) + std::get<3>(c));
        if (!is_num(a) || !is_num(c)) return RefError{ErrorCode::TypeError};
        if (a.index() == 0 && c.index() == 0) {
            __int128 x = std::get<0>(a), y = std::get<0>(c), r = 0;
            if (b.op == BinaryOp::Add) r = x + y;
            else if (b.op == BinaryOp::Sub) r = x - y;
            else if (b.op == BinaryOp::Mul) r = x * y;
            else {
                if (y == 0) return RefError{ErrorCode::DivisionByZero};
                r = x / y;
            }
            if (!fits(r)) return RefError{ErrorCode::Overflow};
            return RefValue(static_cast<std::int64_t>(r));
        }
        double x = to_d(a), y = to_d(c);
        if (b.op == BinaryOp::Add) return RefValue(x + y);
        if (b.op == BinaryOp::Sub) return RefValue(x - y);
        if (b.op == BinaryOp::Mul) return RefValue(x * y);
        if (y == 0.0) return RefError{ErrorCode::DivisionByZero};
        return RefValue(x / y);
    }
    default: break;
    }
    auto cmp = [&](auto x, auto y) -> bool {
        switch (b.op) {
        case BinaryOp::Eq: return x == y;
        case BinaryOp::Ne: return x != y;
        case BinaryOp::Lt: return x < y;
        case BinaryOp::Le: return x <= y;
        case BinaryOp::Gt: return x > y;
        default: return x >= y;
        }
    };
    if (is_num(a) && is_num(c)) {
        if (a.index() == 0 && c.index() == 0) return RefValue(cmp(std::get<0>(a), std::get<0>(c)));
        return RefValue(cmp(to_d(a), to_d(c)));
    }
    if (a.index() == 3 && c.index() == 3) return RefValue(cmp(std::get<3>(a), std::get<3>(c)));
    if (a.index() == 2 && c.index() == 2 && (b.op == BinaryOp::Eq || b.op == BinaryOp::Ne))
        return RefValue(cmp(std::get<2>(a), std::get<2>(c)));
    return RefError{ErrorCode::TypeError};
}

inline RefResult run_impl(const Expression& e, const VariableMap& vars) {
    try {
        return from_value(evaluate_expr(e, vars));
    } catch (const Error& err) {
        return RefError{err.code()};
    }
}

inline bool same(const RefResult& x, const RefResult& y) {
    if (x.index() != y.index()) return false;
    if (x.index() == 1) return std::get<1>(x).code == std::get<1>(y).code;
    return std::get<0>(x) == std::get<0>(y);
}

inline std::string describe(const RefResult& r) {
    if (r.index() == 1) return "error " + std::string(to_string(std::get<1>(r).code));
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) return "\"" + v + "\"";
            else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
            else return std::to_string(v);
        },
        std::get<0>(r));
}

constexpr BinaryOp kBinOps[] = {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div,
                                BinaryOp::Eq,  BinaryOp::Ne,  BinaryOp::Lt,  BinaryOp::Le,
                                BinaryOp::Gt,  BinaryOp::Ge,  BinaryOp::And, BinaryOp::Or};

// Generates trees biased toward integer arithmetic so most of them evaluate
// to a value rather than a type error.
inline NodePtr random_tree(testsupport::Rng& rng, int depth, bool allow_negative_literals) {
    if (depth == 0 || rng.uniform(0, 9) < 2) {
        int kind = rng.uniform(0, 9);
        if (kind < 6) {
            int lo = allow_negative_literals ? -5 : 0;
            return make_literal(Value(rng.uniform(lo, 5)));
        }
        if (kind < 8) {
            static const char* names[] = {"a", "b", "flag", "missing"};
            return make_variable(names[rng.uniform(0, 3)]);
        }
        if (kind == 8) return make_literal(Value(rng.coin()));
        return make_literal(Value(rng.uniform(0, 4) * 0.5));
    }
    if (rng.uniform(0, 9) < 2) {
        auto op = rng.coin() ? UnaryOp::Negate : UnaryOp::Not;
        return make_unary(op, random_tree(rng, depth - 1, allow_negative_literals));
    }
    auto op = kBinOps[rng.uniform(0, 11)];
    return make_binary(op, random_tree(rng, depth - 1, allow_negative_literals),
                       random_tree(rng, depth - 1, allow_negative_literals));
}

} // namespace exprref
