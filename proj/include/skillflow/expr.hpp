#pragma once

#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>

#include "skillflow/value.hpp"

namespace skillflow {

namespace expr {

enum class UnaryOp { Negate, Not };
enum class BinaryOp { Add, Sub, Mul, Div, Eq, Ne, Lt, Le, Gt, Ge, And, Or };

std::string_view symbol(UnaryOp op) noexcept;
std::string_view symbol(BinaryOp op) noexcept;

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Literal {
    Value value;
};
struct VariableRef {
    std::string name;
};
struct Unary {
    UnaryOp op;
    NodePtr operand;
};
struct Binary {
    BinaryOp op;
    NodePtr lhs;
    NodePtr rhs;
};

struct Node {
    std::variant<Literal, VariableRef, Unary, Binary> kind;
};

NodePtr make_literal(Value v);
NodePtr make_variable(std::string name);
NodePtr make_unary(UnaryOp op, NodePtr operand);
NodePtr make_binary(BinaryOp op, NodePtr lhs, NodePtr rhs);

/// Immutable expression tree.
///
/// Grammar, lowest precedence first:
///   or    := and ("or" and)*
///   and   := cmp ("and" cmp)*
///   cmp   := add (("=="|"!="|"<"|"<="|">"|">=") add)*
///   add   := mul (("+"|"-") mul)*
///   mul   := unary (("*"|"/") unary)*
///   unary := ("-"|"not") unary | primary
///   primary := integer | real | "string" | true | false | identifier | "(" or ")"
class Expression {
public:
    explicit Expression(NodePtr root) : root_(std::move(root)) {}

    /// Parses the text between `${` and `}`. `offset` shifts reported error
    /// positions so they index into the enclosing text.
    static Expression parse(std::string_view source, std::size_t offset = 0);

    const Node& root() const noexcept { return *root_; }
    const NodePtr& root_ptr() const noexcept { return root_; }

    std::set<std::string> variables() const;
    std::string to_string() const;

private:
    NodePtr root_;
};

} // namespace expr

/// Strict evaluation: every operand is evaluated, integers promote to real
/// on mixed arithmetic, `and`/`or`/`not` require booleans.
/// Throws UnknownVariable, TypeError, DivisionByZero or Overflow.
Value evaluate_expr(const expr::Expression& expression, const VariableMap& vars);

/// A property value as written in a process: either a typed constant or a
/// `${...}` expression. Keeps its source text so serialization is lossless.
class ValueExpr {
public:
    static ValueExpr parse(std::string_view text);
    static ValueExpr constant(const Value& value);

    bool is_constant() const noexcept { return std::holds_alternative<Value>(body_); }
    const Value* constant_value() const noexcept { return std::get_if<Value>(&body_); }
    const expr::Expression* expression() const noexcept { return std::get_if<expr::Expression>(&body_); }
    const std::string& source() const noexcept { return source_; }

    Value evaluate(const VariableMap& vars) const;

    bool operator==(const ValueExpr& other) const noexcept { return source_ == other.source_; }

private:
    ValueExpr(std::string source, std::variant<Value, expr::Expression> body)
        : source_(std::move(source)), body_(std::move(body)) {}

    std::string source_;
    std::variant<Value, expr::Expression> body_;
};

inline ValueExpr parse_value_expr(std::string_view text) { return ValueExpr::parse(text); }

/// Infers a constant from bare text: integer, real, boolean, else string.
Value infer_constant(std::string_view text);

/// Replaces every `${...}` occurrence in `text` with the displayed value of
/// the enclosed expression.
std::string render_template(std::string_view text, const VariableMap& vars);

} // namespace skillflow
