#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "reghnt/corpus.hpp"
#include "reghnt/graph.hpp"

namespace reghnt {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TreeKind { Arithmetic, Span };

// Arithmetic trees use Add/Sub/Mul/Div. Span trees reuse Add (splice spans) and
// Mul (range between two node ids) and add Count.
enum class Op { Add, Sub, Mul, Div, Count };
enum class Constant { One, Avg };

struct Token {
    enum class Kind { Operator, Number, Const, NodeId };
    Kind kind = Kind::Number;
    Op op = Op::Add;
    double value = 0.0;
    // NumberIndex entry the number was copied from; empty for unbound literals.
    std::optional<std::size_t> entry;
    Constant constant = Constant::One;
    int node_id = -1;

    static Token make_op(Op o) { Token t; t.kind = Kind::Operator; t.op = o; return t; }
    static Token number(double v, std::optional<std::size_t> e = std::nullopt) {
        Token t; t.kind = Kind::Number; t.value = v; t.entry = e; return t;
    }
    static Token constant_leaf(Constant c) { Token t; t.kind = Kind::Const; t.constant = c; return t; }
    static Token node(int id) { Token t; t.kind = Kind::NodeId; t.node_id = id; return t; }

    bool is_operator() const { return kind == Kind::Operator; }
    bool operator==(const Token&) const = default;
};

using PrefixExpr = std::vector<Token>;

// Binary expression tree stored as a node array; node 0 is not necessarily the
// root. Immutable once built.
class ExprTree {
public:
    struct Node {
        Token token;
        int left = -1;
        int right = -1;
        bool operator==(const Node&) const = default;
    };

    ExprTree() = default;
    ExprTree(TreeKind kind, std::vector<Node> nodes, int root);

    TreeKind kind() const { return kind_; }
    int root() const { return root_; }
    const Node& node(int i) const { return nodes_.at(i); }
    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    // Structural equality: same kind and same shape/tokens from the root down.
    bool operator==(const ExprTree& other) const;

    // Builders used by parsers and tests.
    static ExprTree leaf(TreeKind kind, Token t);
    static ExprTree combine(Op op, const ExprTree& left, const ExprTree& right);

private:
    TreeKind kind_ = TreeKind::Arithmetic;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Checks operator sets and leaf kinds for the tree kind; throws StructureError.
void check_structure(const ExprTree& tree);

// Infix derivation with + - * / x × ÷ −, parentheses, commas, $ and %.
// Literals bind to the first NumberIndex entry of equal value (relative 1e-6).
ExprTree parse_infix(std::string_view derivation, const NumberIndex& index = {});

PrefixExpr to_prefix(const ExprTree& tree);
ExprTree from_prefix(const PrefixExpr& tokens, TreeKind kind);
// Running arity count reaches zero exactly at the last token.
bool is_valid_prefix(const PrefixExpr& tokens);

// Space-separated text form. Operators print as + - × ÷ C, constants as
// CONST_1 and AVG, numbers in shortest round-trip form, node ids as integers.
std::string token_to_string(const Token& t, TreeKind kind);
std::string prefix_to_string(const PrefixExpr& tokens, TreeKind kind);
std::vector<std::string> prefix_to_strings(const PrefixExpr& tokens, TreeKind kind);
PrefixExpr parse_prefix(std::string_view text, TreeKind kind);
PrefixExpr parse_prefix_tokens(const std::vector<std::string>& tokens, TreeKind kind);

std::string format_number(double v);

double eval_arith(const ExprTree& tree);

// Span results: a list of spans, or a count when the root is C.
using SpanResult = std::variant<std::vector<std::string>, int>;
SpanResult eval_span(const ExprTree& tree, const HeteroGraph& graph);

Answer apply_scale(const Answer& value, Scale scale);

}  // namespace reghnt
