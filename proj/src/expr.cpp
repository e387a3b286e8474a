#include "skillflow/expr.hpp"

#include <cctype>
#include <charconv>
#include <limits>
#include <vector>

#include "skillflow/error.hpp"

namespace skillflow {
namespace expr {

std::string_view symbol(UnaryOp op) noexcept { return op == UnaryOp::Negate ? "-" : "not"; }

std::string_view symbol(BinaryOp op) noexcept {
    switch (op) {
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::Eq: return "==";
    case BinaryOp::Ne: return "!=";
    case BinaryOp::Lt: return "<";
    case BinaryOp::Le: return "<=";
    case BinaryOp::Gt: return ">";
    case BinaryOp::Ge: return ">=";
    case BinaryOp::And: return "and";
    case BinaryOp::Or: return "or";
    }
    return "?";
}

NodePtr make_literal(Value v) { return std::make_shared<const Node>(Node{Literal{std::move(v)}}); }
NodePtr make_variable(std::string name) {
    return std::make_shared<const Node>(Node{VariableRef{std::move(name)}});
}
NodePtr make_unary(UnaryOp op, NodePtr operand) {
    return std::make_shared<const Node>(Node{Unary{op, std::move(operand)}});
}
NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs) {
    return std::make_shared<const Node>(Node{Binary{op, std::move(lhs), std::move(rhs)}});
}

namespace {

enum class Tok { Integer, Real, String, Ident, True, False, And, Or, Not, Op, LParen, RParen, End };

struct Token {
    Tok kind;
    std::string text;
    std::size_t pos;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> tokenize(std::string_view s, std::size_t offset) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        std::size_t start = i;
        if (digit(c)) {
            while (i < s.size() && digit(s[i])) ++i;
            bool real = false;
            if (i + 1 < s.size() && s[i] == '.' && digit(s[i + 1])) {
                real = true;
                ++i;
                while (i < s.size() && digit(s[i])) ++i;
            }
            out.push_back({real ? Tok::Real : Tok::Integer, std::string(s.substr(start, i - start)),
                           offset + start});
            continue;
        }
        if (c == '"') {
            std::string text;
            ++i;
            bool closed = false;
            while (i < s.size()) {
                if (s[i] == '\\' && i + 1 < s.size()) {
                    char e = s[i + 1];
                    text += e == 'n' ? '\n' : e == 't' ? '\t' : e;
                    i += 2;
                } else if (s[i] == '"') {
                    closed = true;
                    ++i;
                    break;
                } else {
                    text += s[i++];
                }
            }
            if (!closed) throw ExprParseError(offset + s.size(), "closing '\"'");
            out.push_back({Tok::String, std::move(text), offset + start});
            continue;
        }
        if (ident_start(c)) {
            while (i < s.size() && ident_char(s[i])) ++i;
            std::string word(s.substr(start, i - start));
            Tok kind = Tok::Ident;
            if (word == "true") kind = Tok::True;
            else if (word == "false") kind = Tok::False;
            else if (word == "and") kind = Tok::And;
            else if (word == "or") kind = Tok::Or;
            else if (word == "not") kind = Tok::Not;
            out.push_back({kind, std::move(word), offset + start});
            continue;
        }
        if (c == '(' || c == ')') {
            out.push_back({c == '(' ? Tok::LParen : Tok::RParen, std::string(1, c), offset + start});
            ++i;
            continue;
        }
        std::string_view two = s.substr(i, 2);
        if (two == "==" || two == "!=" || two == "<=" || two == ">=") {
            out.push_back({Tok::Op, std::string(two), offset + start});
            i += 2;
            continue;
        }
        if (c == '+' || c == '-' || c == '*' || c == '/' || c == '<' || c == '>') {
            out.push_back({Tok::Op, std::string(1, c), offset + start});
            ++i;
            continue;
        }
        throw ExprParseError(offset + start, "operand or operator");
    }
    out.push_back({Tok::End, {}, offset + s.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

    NodePtr parse_all() {
        NodePtr root = parse_or();
        if (peek().kind != Tok::End) throw ExprParseError(peek().pos, "end of expression");
        return root;
    }

private:
    const Token& peek() const { return toks_[pos_]; }
    const Token& next() { return toks_[pos_++]; }
    bool at_op(std::string_view op) const { return peek().kind == Tok::Op && peek().text == op; }

    NodePtr parse_or() {
        NodePtr lhs = parse_and();
        while (peek().kind == Tok::Or) {
            next();
            lhs = make_binary(BinaryOp::Or, lhs, parse_and());
        }
        return lhs;
    }

    NodePtr parse_and() {
        NodePtr lhs = parse_cmp();
        while (peek().kind == Tok::And) {
            next();
            lhs = make_binary(BinaryOp::And, lhs, parse_cmp());
        }
        return lhs;
    }

    NodePtr parse_cmp() {
        NodePtr lhs = parse_add();
        for (;;) {
            BinaryOp op;
            if (at_op("==")) op = BinaryOp::Eq;
            else if (at_op("!=")) op = BinaryOp::Ne;
            else if (at_op("<")) op = BinaryOp::Lt;
            else if (at_op("<=")) op = BinaryOp::Le;
            else if (at_op(">")) op = BinaryOp::Gt;
            else if (at_op(">=")) op = BinaryOp::Ge;
            else return lhs;
            next();
            lhs = make_binary(op, lhs, parse_add());
        }
    }

    NodePtr parse_add() {
        NodePtr lhs = parse_mul();
        for (;;) {
            BinaryOp op;
            if (at_op("+")) op = BinaryOp::Add;
            else if (at_op("-")) op = BinaryOp::Sub;
            else return lhs;
            next();
            lhs = make_binary(op, lhs, parse_mul());
        }
    }

    NodePtr parse_mul() {
        NodePtr lhs = parse_unary();
        for (;;) {
            BinaryOp op;
            if (at_op("*")) op = BinaryOp::Mul;
            else if (at_op("/")) op = BinaryOp::Div;
            else return lhs;
            next();
            lhs = make_binary(op, lhs, parse_unary());
        }
    }

    NodePtr parse_unary() {
        if (at_op("-")) {
            next();
            return make_unary(UnaryOp::Negate, parse_unary());
        }
        if (peek().kind == Tok::Not) {
            next();
            return make_unary(UnaryOp::Not, parse_unary());
        }
        return parse_primary();
    }

    NodePtr parse_primary() {
        const Token& t = peek();
        switch (t.kind) {
        case Tok::Integer: {
            std::int64_t v = 0;
            auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
            if (ec != std::errc{}) throw ExprParseError(t.pos, "integer literal within 64-bit range");
            next();
            return make_literal(Value(v));
        }
        case Tok::Real: {
            double v = std::stod(t.text);
            next();
            return make_literal(Value(v));
        }
        case Tok::String: {
            std::string s = t.text;
            next();
            return make_literal(Value(std::move(s)));
        }
        case Tok::True: next(); return make_literal(Value(true));
        case Tok::False: next(); return make_literal(Value(false));
        case Tok::Ident: {
            std::string name = t.text;
            next();
            return make_variable(std::move(name));
        }
        case Tok::LParen: {
            next();
            NodePtr inner = parse_or();
            if (peek().kind != Tok::RParen) throw ExprParseError(peek().pos, "')'");
            next();
            return inner;
        }
        default: throw ExprParseError(t.pos, "operand");
        }
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

void collect_variables(const Node& n, std::set<std::string>& out) {
    std::visit(
        [&](const auto& k) {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, VariableRef>) out.insert(k.name);
            else if constexpr (std::is_same_v<K, Unary>) collect_variables(*k.operand, out);
            else if constexpr (std::is_same_v<K, Binary>) {
                collect_variables(*k.lhs, out);
                collect_variables(*k.rhs, out);
            }
        },
        n.kind);
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

std::string render(const Node& n) {
    return std::visit(
        [](const auto& k) -> std::string {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, Literal>) {
                return k.value.type() == Datatype::String ? quote(k.value.as_string()) : display(k.value);
            } else if constexpr (std::is_same_v<K, VariableRef>) {
                return k.name;
            } else if constexpr (std::is_same_v<K, Unary>) {
                return k.op == UnaryOp::Not ? "(not " + render(*k.operand) + ")"
                                            : "(-" + render(*k.operand) + ")";
            } else {
                return "(" + render(*k.lhs) + " " + std::string(symbol(k.op)) + " " + render(*k.rhs) + ")";
            }
        },
        n.kind);
}

} // namespace

Expression Expression::parse(std::string_view source, std::size_t offset) {
    Parser parser(tokenize(source, offset));
    return Expression(parser.parse_all());
}

std::set<std::string> Expression::variables() const {
    std::set<std::string> out;
    collect_variables(*root_, out);
    return out;
}

std::string Expression::to_string() const { return render(*root_); }

} // namespace expr

namespace {

using expr::BinaryOp;
using expr::Node;
using expr::UnaryOp;

[[noreturn]] void type_error(std::string_view op, const Value& a) {
    throw Error(ErrorCode::TypeError,
                "operator '" + std::string(op) + "' not defined for " + std::string(to_string(a.type())),
                std::string(op));
}

[[noreturn]] void type_error(std::string_view op, const Value& a, const Value& b) {
    throw Error(ErrorCode::TypeError,
                "operator '" + std::string(op) + "' not defined for (" + std::string(to_string(a.type())) +
                    ", " + std::string(to_string(b.type())) + ")",
                std::string(op));
}

template <typename Op>
std::int64_t checked(Op op, std::int64_t x, std::int64_t y) {
    std::int64_t r = 0;
    if (op(x, y, &r)) throw Error(ErrorCode::Overflow, "integer overflow");
    return r;
}

Value arithmetic(BinaryOp op, const Value& a, const Value& b) {
    if (op == BinaryOp::Add && a.type() == Datatype::String && b.type() == Datatype::String)
        return Value(a.as_string() + b.as_string());
    if (!a.is_numeric() || !b.is_numeric()) type_error(expr::symbol(op), a, b);
    if (a.type() == Datatype::Integer && b.type() == Datatype::Integer) {
        std::int64_t x = a.as_integer(), y = b.as_integer();
        switch (op) {
        case BinaryOp::Add:
            return Value(checked([](auto p, auto q, auto* r) { return __builtin_add_overflow(p, q, r); }, x, y));
        case BinaryOp::Sub:
            return Value(checked([](auto p, auto q, auto* r) { return __builtin_sub_overflow(p, q, r); }, x, y));
        case BinaryOp::Mul:
            return Value(checked([](auto p, auto q, auto* r) { return __builtin_mul_overflow(p, q, r); }, x, y));
        default:
            if (y == 0) throw Error(ErrorCode::DivisionByZero, "division by zero");
            if (x == std::numeric_limits<std::int64_t>::min() && y == -1)
                throw Error(ErrorCode::Overflow, "integer overflow");
            return Value(x / y);
        }
    }
    double x = a.as_real(), y = b.as_real();
    switch (op) {
    case BinaryOp::Add: return Value(x + y);
    case BinaryOp::Sub: return Value(x - y);
    case BinaryOp::Mul: return Value(x * y);
    default:
        if (y == 0.0) throw Error(ErrorCode::DivisionByZero, "division by zero");
        return Value(x / y);
    }
}

template <typename T>
bool compare(BinaryOp op, const T& x, const T& y) {
    switch (op) {
    case BinaryOp::Eq: return x == y;
    case BinaryOp::Ne: return x != y;
    case BinaryOp::Lt: return x < y;
    case BinaryOp::Le: return x <= y;
    case BinaryOp::Gt: return x > y;
    default: return x >= y;
    }
}

Value comparison(BinaryOp op, const Value& a, const Value& b) {
    if (a.is_numeric() && b.is_numeric()) {
        if (a.type() == Datatype::Integer && b.type() == Datatype::Integer)
            return Value(compare(op, a.as_integer(), b.as_integer()));
        return Value(compare(op, a.as_real(), b.as_real()));
    }
    if (a.type() == Datatype::String && b.type() == Datatype::String)
        return Value(compare(op, a.as_string(), b.as_string()));
    if (a.type() == Datatype::Boolean && b.type() == Datatype::Boolean &&
        (op == BinaryOp::Eq || op == BinaryOp::Ne))
        return Value(compare(op, a.as_boolean(), b.as_boolean()));
    type_error(expr::symbol(op), a, b);
}

Value eval(const Node& n, const VariableMap& vars) {
    return std::visit(
        [&](const auto& k) -> Value {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, expr::Literal>) {
                return k.value;
            } else if constexpr (std::is_same_v<K, expr::VariableRef>) {
                auto it = vars.find(k.name);
                if (it == vars.end())
                    throw Error(ErrorCode::UnknownVariable, "unknown variable '" + k.name + "'", k.name);
                return it->second;
            } else if constexpr (std::is_same_v<K, expr::Unary>) {
                Value v = eval(*k.operand, vars);
                if (k.op == UnaryOp::Not) {
                    if (v.type() != Datatype::Boolean) type_error("not", v);
                    return Value(!v.as_boolean());
                }
                if (v.type() == Datatype::Integer) {
                    if (v.as_integer() == std::numeric_limits<std::int64_t>::min())
                        throw Error(ErrorCode::Overflow, "integer overflow");
                    return Value(-v.as_integer());
                }
                if (v.type() == Datatype::Real) return Value(-v.as_real());
                type_error("-", v);
            } else {
                Value a = eval(*k.lhs, vars);
                Value b = eval(*k.rhs, vars);
                switch (k.op) {
                case BinaryOp::And:
                case BinaryOp::Or:
                    if (a.type() != Datatype::Boolean || b.type() != Datatype::Boolean)
                        type_error(expr::symbol(k.op), a, b);
                    return Value(k.op == BinaryOp::And ? (a.as_boolean() && b.as_boolean())
                                                       : (a.as_boolean() || b.as_boolean()));
                case BinaryOp::Add:
                case BinaryOp::Sub:
                case BinaryOp::Mul:
                case BinaryOp::Div: return arithmetic(k.op, a, b);
                default: return comparison(k.op, a, b);
                }
            }
        },
        n.kind);
}

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

/// Index of the `}` closing a `${` that starts at `open`, skipping braces
/// inside string literals; npos when unterminated.
std::size_t find_close(std::string_view text, std::size_t open) {
    bool in_string = false;
    for (std::size_t i = open + 2; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (c == '\\') ++i;
            else if (c == '"') in_string = false;
        } else if (c == '"') {
            in_string = true;
        } else if (c == '}') {
            return i;
        }
    }
    return std::string_view::npos;
}

} // namespace

Value evaluate_expr(const expr::Expression& expression, const VariableMap& vars) {
    return eval(expression.root(), vars);
}

Value infer_constant(std::string_view text) {
    std::string_view digits = text;
    if (!digits.empty() && digits.front() == '-') digits.remove_prefix(1);
    if (all_digits(digits)) {
        std::int64_t v = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec == std::errc{}) return Value(v);
        return Value(std::string(text));
    }
    auto dot = digits.find('.');
    if (dot != std::string_view::npos && all_digits(digits.substr(0, dot)) &&
        all_digits(digits.substr(dot + 1))) {
        double v = 0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec == std::errc{} && p == text.data() + text.size()) return Value(v);
    }
    if (text == "true") return Value(true);
    if (text == "false") return Value(false);
    return Value(std::string(text));
}

ValueExpr ValueExpr::parse(std::string_view text) {
    if (text.starts_with("${")) {
        if (text.size() < 3 || text.back() != '}') {
            // Unterminated: report the interior's own error if it has one,
            // otherwise the missing brace, both at end of input.
            expr::Expression::parse(text.substr(2), 2);
            throw ExprParseError(text.size(), "'}'");
        }
        auto e = expr::Expression::parse(text.substr(2, text.size() - 3), 2);
        return ValueExpr(std::string(text), std::move(e));
    }
    return ValueExpr(std::string(text), infer_constant(text));
}

ValueExpr ValueExpr::constant(const Value& value) { return ValueExpr(display(value), value); }

Value ValueExpr::evaluate(const VariableMap& vars) const {
    if (const Value* v = constant_value()) return *v;
    return evaluate_expr(*expression(), vars);
}

std::string render_template(std::string_view text, const VariableMap& vars) {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t open = text.find("${", i);
        if (open == std::string_view::npos) break;
        std::size_t close = find_close(text, open);
        if (close == std::string_view::npos) break;
        out.append(text.substr(i, open - i));
        auto e = expr::Expression::parse(text.substr(open + 2, close - open - 2), open + 2);
        out += display(evaluate_expr(e, vars));
        i = close + 1;
    }
    out.append(text.substr(i));
    return out;
}

} // namespace skillflow
