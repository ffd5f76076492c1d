#include "reghnt/expr.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>

namespace reghnt {

ExprTree::ExprTree(TreeKind kind, std::vector<Node> nodes, int root) : kind_(kind), nodes_(std::move(nodes)), root_(root) {
    if (root_ < 0 || root_ >= static_cast<int>(nodes_.size())) throw StructureError("expression root out of range");
}

ExprTree ExprTree::leaf(TreeKind kind, Token t) {
    if (t.is_operator()) throw StructureError("leaf built from an operator token");
    return ExprTree(kind, {Node{std::move(t), -1, -1}}, 0);
}

ExprTree ExprTree::combine(Op op, const ExprTree& left, const ExprTree& right) {
    if (left.kind() != right.kind()) throw StructureError("cannot combine arithmetic and span subtrees");
    std::vector<Node> nodes = left.nodes_;
    const int offset = static_cast<int>(nodes.size());
    for (Node n : right.nodes_) {
        if (n.left >= 0) n.left += offset;
        if (n.right >= 0) n.right += offset;
        nodes.push_back(std::move(n));
    }
    nodes.push_back(Node{Token::make_op(op), left.root_, right.root_ + offset});
    const int root = static_cast<int>(nodes.size()) - 1;
    return ExprTree(left.kind(), std::move(nodes), root);
}

bool ExprTree::operator==(const ExprTree& other) const {
    if (kind_ != other.kind_ || empty() != other.empty()) return false;
    if (empty()) return true;
    std::function<bool(int, int)> same = [&](int a, int b) {
        if (a < 0 || b < 0) return a == b;
        const Node& x = nodes_[a];
        const Node& y = other.nodes_[b];
        return x.token == y.token && same(x.left, y.left) && same(x.right, y.right);
    };
    return same(root_, other.root_);
}

void check_structure(const ExprTree& tree) {
    if (tree.empty()) throw StructureError("empty expression tree");
    std::function<void(int, int)> visit = [&](int i, int parent) {
        const auto& n = tree.node(i);
        const Token& t = n.token;
        const bool has_children = n.left >= 0 && n.right >= 0;
        if (t.is_operator() != has_children || (!has_children && (n.left >= 0 || n.right >= 0))) {
            throw StructureError("operators need exactly two children and leaves none");
        }
        const Token* p = parent >= 0 ? &tree.node(parent).token : nullptr;
        if (tree.kind() == TreeKind::Arithmetic) {
            if (t.kind == Token::Kind::NodeId) throw StructureError("node-id leaf in an arithmetic tree");
            if (t.is_operator() && t.op == Op::Count) throw StructureError("C operator in an arithmetic tree");
        } else {
            if (t.kind == Token::Kind::Number || t.kind == Token::Kind::Const) {
                throw StructureError("numeric leaf in a span tree");
            }
            if (t.is_operator() && (t.op == Op::Sub || t.op == Op::Div)) {
                throw StructureError("span trees only use +, × and C");
            }
            if (t.is_operator() && t.op == Op::Count && p) throw StructureError("C must be the root of a span tree");
            if (t.kind == Token::Kind::NodeId && !(p && p->op == Op::Mul)) {
                throw StructureError("node ids may only appear under ×");
            }
            if (t.is_operator() && p && p->op == Op::Mul) throw StructureError("× takes two node ids");
        }
        if (has_children) {
            visit(n.left, i);
            visit(n.right, i);
        }
    };
    visit(tree.root(), -1);
}

// ---------------------------------------------------------------------------
// Infix parsing

namespace {

struct InfixToken {
    enum class Kind { Number, Op, LParen, RParen, End };
    Kind kind = Kind::End;
    char op = 0;  // one of + - * /
    double value = 0.0;
    std::size_t pos = 0;
};

class InfixLexer {
public:
    explicit InfixLexer(std::string_view s) : s_(s) {}

    std::vector<InfixToken> run() {
        std::vector<InfixToken> out;
        while (true) {
            skip_space();
            InfixToken t;
            t.pos = i_;
            if (i_ >= s_.size()) {
                out.push_back(t);
                return out;
            }
            char c = s_[i_];
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '$') {
                t.kind = InfixToken::Kind::Number;
                t.value = number();
            } else if (c == '(') {
                t.kind = InfixToken::Kind::LParen;
                ++i_;
            } else if (c == ')') {
                t.kind = InfixToken::Kind::RParen;
                ++i_;
            } else if (c == '+' || c == '-' || c == '*' || c == '/') {
                t.kind = InfixToken::Kind::Op;
                t.op = c;
                ++i_;
            } else if ((c == 'x' || c == 'X') && standalone_x()) {
                t.kind = InfixToken::Kind::Op;
                t.op = '*';
                ++i_;
            } else if (match("\xC3\x97")) {  // ×
                t.kind = InfixToken::Kind::Op;
                t.op = '*';
            } else if (match("\xC3\xB7")) {  // ÷
                t.kind = InfixToken::Kind::Op;
                t.op = '/';
            } else if (match("\xE2\x88\x92")) {  // −
                t.kind = InfixToken::Kind::Op;
                t.op = '-';
            } else {
                throw ParseError("unexpected character in derivation", i_);
            }
            out.push_back(t);
        }
    }

private:
    void skip_space() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool match(std::string_view lit) {
        if (s_.substr(i_, lit.size()) == lit) {
            i_ += lit.size();
            return true;
        }
        return false;
    }
    bool standalone_x() const {
        auto alpha = [&](std::size_t k) { return k < s_.size() && std::isalpha(static_cast<unsigned char>(s_[k])); };
        return !(i_ > 0 && alpha(i_ - 1)) && !alpha(i_ + 1);
    }
    double number() {
        std::size_t start = i_;
        if (s_[i_] == '$') {
            ++i_;
            skip_space();
        }
        std::size_t digits_start = i_;
        while (i_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[i_])) || s_[i_] == '.' || s_[i_] == ',')) {
            // A comma only groups digits; "1,2" inside a list would be ambiguous anyway.
            if (s_[i_] == ',' && !(i_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_ + 1])))) break;
            ++i_;
        }
        std::string_view text = s_.substr(digits_start, i_ - digits_start);
        if (i_ < s_.size() && s_[i_] == '%') ++i_;
        auto v = normalize_number(text);
        if (!v) throw ParseError("malformed number in derivation", start);
        return *v;
    }

    std::string_view s_;
    std::size_t i_ = 0;
};

class InfixParser {
public:
    InfixParser(std::vector<InfixToken> toks, const NumberIndex& index) : toks_(std::move(toks)), index_(index) {}

    ExprTree parse() {
        if (peek().kind == InfixToken::Kind::End) throw ParseError("empty derivation", 0);
        ExprTree t = expr();
        if (peek().kind != InfixToken::Kind::End) {
            if (peek().kind == InfixToken::Kind::RParen) throw ParseError("unbalanced ')'", peek().pos);
            throw ParseError("unexpected token after expression", peek().pos);
        }
        return t;
    }

private:
    const InfixToken& peek() const { return toks_[k_]; }
    const InfixToken& next() { return toks_[k_++]; }

    static Op to_op(char c) {
        switch (c) {
        case '+': return Op::Add;
        case '-': return Op::Sub;
        case '*': return Op::Mul;
        default: return Op::Div;
        }
    }

    ExprTree expr() {
        ExprTree lhs = term();
        while (peek().kind == InfixToken::Kind::Op && (peek().op == '+' || peek().op == '-')) {
            Op op = to_op(next().op);
            lhs = ExprTree::combine(op, lhs, term());
        }
        return lhs;
    }

    ExprTree term() {
        ExprTree lhs = factor();
        while (peek().kind == InfixToken::Kind::Op && (peek().op == '*' || peek().op == '/')) {
            Op op = to_op(next().op);
            lhs = ExprTree::combine(op, lhs, factor());
        }
        return lhs;
    }

    ExprTree literal(double v) { return ExprTree::leaf(TreeKind::Arithmetic, Token::number(v, index_.find(v))); }

    ExprTree factor() {
        const InfixToken& t = next();
        switch (t.kind) {
        case InfixToken::Kind::Number:
            return literal(t.value);
        case InfixToken::Kind::LParen: {
            ExprTree inner = expr();
            if (peek().kind != InfixToken::Kind::RParen) throw ParseError("unbalanced '('", t.pos);
            next();
            return inner;
        }
        case InfixToken::Kind::Op:
            if (t.op == '-') {
                if (peek().kind == InfixToken::Kind::Number) return literal(-next().value);
                return ExprTree::combine(Op::Mul, literal(-1.0), factor());
            }
            throw ParseError("dangling operator", t.pos);
        case InfixToken::Kind::RParen:
            throw ParseError("unbalanced ')'", t.pos);
        case InfixToken::Kind::End:
            throw ParseError("dangling operator at end of derivation", t.pos);
        }
        throw ParseError("unexpected token", t.pos);
    }

    std::vector<InfixToken> toks_;
    const NumberIndex& index_;
    std::size_t k_ = 0;
};

}  // namespace

ExprTree parse_infix(std::string_view derivation, const NumberIndex& index) {
    InfixParser parser(InfixLexer(derivation).run(), index);
    return parser.parse();
}

// ---------------------------------------------------------------------------
// Prefix form

PrefixExpr to_prefix(const ExprTree& tree) {
    PrefixExpr out;
    if (tree.empty()) return out;
    std::vector<int> stack{tree.root()};
    while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        const auto& n = tree.node(i);
        out.push_back(n.token);
        if (n.token.is_operator()) {
            stack.push_back(n.right);
            stack.push_back(n.left);
        }
    }
    return out;
}

bool is_valid_prefix(const PrefixExpr& tokens) {
    if (tokens.empty()) return false;
    long need = 1;
    for (const auto& t : tokens) {
        if (need == 0) return false;
        need += t.is_operator() ? 1 : -1;
    }
    return need == 0;
}

ExprTree from_prefix(const PrefixExpr& tokens, TreeKind kind) {
    if (!is_valid_prefix(tokens)) throw StructureError("prefix expression has invalid arity");
    std::vector<ExprTree::Node> nodes(tokens.size());
    std::size_t pos = 0;
    std::function<int()> build = [&]() -> int {
        const int i = static_cast<int>(pos);
        nodes[pos].token = tokens[pos];
        ++pos;
        if (tokens[i].is_operator()) {
            nodes[i].left = build();
            nodes[i].right = build();
        }
        return i;
    };
    int root = build();
    return ExprTree(kind, std::move(nodes), root);
}

std::string format_number(double v) {
    if (v == 0.0) v = 0.0;  // drop the sign of -0
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string token_to_string(const Token& t, TreeKind kind) {
    switch (t.kind) {
    case Token::Kind::Operator:
        switch (t.op) {
        case Op::Add: return "+";
        case Op::Sub: return "-";
        case Op::Mul: return "\xC3\x97";
        case Op::Div: return "\xC3\xB7";
        case Op::Count: return "C";
        }
        break;
    case Token::Kind::Number: return format_number(t.value);
    case Token::Kind::Const: return t.constant == Constant::One ? "CONST_1" : "AVG";
    case Token::Kind::NodeId: return std::to_string(t.node_id);
    }
    (void)kind;
    return "?";
}

std::vector<std::string> prefix_to_strings(const PrefixExpr& tokens, TreeKind kind) {
    std::vector<std::string> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(token_to_string(t, kind));
    return out;
}

std::string prefix_to_string(const PrefixExpr& tokens, TreeKind kind) {
    std::string out;
    for (const auto& s : prefix_to_strings(tokens, kind)) {
        if (!out.empty()) out += ' ';
        out += s;
    }
    return out;
}

PrefixExpr parse_prefix_tokens(const std::vector<std::string>& tokens, TreeKind kind) {
    PrefixExpr out;
    std::size_t offset = 0;
    for (const auto& s : tokens) {
        if (s == "+") {
            out.push_back(Token::make_op(Op::Add));
        } else if (s == "-" || s == "\xE2\x88\x92") {
            out.push_back(Token::make_op(Op::Sub));
        } else if (s == "*" || s == "\xC3\x97" || s == "x") {
            out.push_back(Token::make_op(Op::Mul));
        } else if (s == "/" || s == "\xC3\xB7") {
            out.push_back(Token::make_op(Op::Div));
        } else if (s == "C") {
            out.push_back(Token::make_op(Op::Count));
        } else if (s == "CONST_1") {
            out.push_back(Token::constant_leaf(Constant::One));
        } else if (s == "AVG") {
            out.push_back(Token::constant_leaf(Constant::Avg));
        } else if (kind == TreeKind::Span) {
            int id = 0;
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
            if (ec != std::errc{} || ptr != s.data() + s.size()) throw ParseError("bad node id '" + s + "'", offset);
            out.push_back(Token::node(id));
        } else {
            auto v = normalize_number(s);
            if (!v) throw ParseError("bad prefix token '" + s + "'", offset);
            out.push_back(Token::number(*v));
        }
        offset += s.size() + 1;
    }
    return out;
}

PrefixExpr parse_prefix(std::string_view text, TreeKind kind) {
    std::vector<std::string> parts;
    std::istringstream in{std::string(text)};
    for (std::string s; in >> s;) parts.push_back(s);
    return parse_prefix_tokens(parts, kind);
}

// ---------------------------------------------------------------------------
// Evaluation

double eval_arith(const ExprTree& tree) {
    if (tree.kind() != TreeKind::Arithmetic) throw EvalError("eval_arith on a span tree");
    check_structure(tree);
    int numbers_seen = 0;
    std::function<double(int)> eval = [&](int i) -> double {
        const auto& n = tree.node(i);
        const Token& t = n.token;
        switch (t.kind) {
        case Token::Kind::Number:
            ++numbers_seen;
            return t.value;
        case Token::Kind::Const:
            if (t.constant == Constant::One) return 1.0;
            if (numbers_seen == 0) throw EvalError("AVG with no preceding numbers");
            return static_cast<double>(numbers_seen);
        case Token::Kind::NodeId:
            throw EvalError("node id in arithmetic tree");
        case Token::Kind::Operator:
            break;
        }
        double a = eval(n.left);
        double b = eval(n.right);
        switch (t.op) {
        case Op::Add: return a + b;
        case Op::Sub: return a - b;
        case Op::Mul: return a * b;
        case Op::Div:
            if (b == 0.0) throw EvalError("division by zero");
            return a / b;
        case Op::Count: break;
        }
        throw EvalError("unsupported operator in arithmetic tree");
    };
    double v = eval(tree.root());
    if (!std::isfinite(v)) throw EvalError("non-finite result");
    return v;
}

SpanResult eval_span(const ExprTree& tree, const HeteroGraph& graph) {
    if (tree.kind() != TreeKind::Span) throw EvalError("eval_span on an arithmetic tree");
    check_structure(tree);
    std::function<std::vector<std::string>(int)> spans = [&](int i) -> std::vector<std::string> {
        const auto& n = tree.node(i);
        if (n.token.op == Op::Mul) {
            int a = tree.node(n.left).token.node_id;
            int b = tree.node(n.right).token.node_id;
            const int size = static_cast<int>(graph.size());
            if (a < 0 || b < 0 || a >= size || b >= size) throw EvalError("node id out of range");
            if (a > b) throw EvalError("range error: start node " + std::to_string(a) + " after end node " + std::to_string(b));
            std::string text;
            for (int k = a; k <= b; ++k) {
                const std::string& w = graph.nodes[k].text;
                if (w.empty()) continue;
                if (!text.empty()) text += ' ';
                text += w;
            }
            return {text};
        }
        auto left = spans(n.left);
        auto right = spans(n.right);
        left.insert(left.end(), right.begin(), right.end());
        return left;
    };
    const auto& root = tree.node(tree.root());
    if (root.token.op == Op::Count) {
        auto all = spans(tree.root());
        return static_cast<int>(all.size());
    }
    return spans(tree.root());
}

Answer apply_scale(const Answer& value, Scale scale) {
    if (const double* v = std::get_if<double>(&value)) return *v * scale_factor(scale);
    auto spans = std::get<std::vector<std::string>>(value);
    if (scale != Scale::None) {
        for (auto& s : spans) {
            s += ' ';
            s += to_string(scale);
        }
    }
    return spans;
}

}  // namespace reghnt
