#pragma once

// Independent oracles for the expression layer: a shunting-yard infix evaluator
// and a random tree / random infix generator. None of this reuses the library
// parser or evaluator.

#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "reghnt/expr.hpp"

namespace reghnt::testing {

// Dijkstra's shunting-yard over ASCII + - * / and parentheses, evaluating the
// RPN output with a value stack.
inline double shunting_yard_eval(const std::string& s) {
    auto prec = [](char op) { return (op == '+' || op == '-') ? 1 : 2; };
    std::vector<double> values;
    std::vector<char> ops;
    auto apply = [&]() {
        char op = ops.back();
        ops.pop_back();
        if (values.size() < 2) throw std::runtime_error("oracle: stack underflow");
        double b = values.back();
        values.pop_back();
        double a = values.back();
        values.pop_back();
        switch (op) {
        case '+': values.push_back(a + b); break;
        case '-': values.push_back(a - b); break;
        case '*': values.push_back(a * b); break;
        default: values.push_back(a / b); break;
        }
    };
    for (std::size_t i = 0; i < s.size();) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
        } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            std::size_t j = i;
            while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
            values.push_back(std::stod(s.substr(i, j - i)));
            i = j;
        } else if (c == '(') {
            ops.push_back(c);
            ++i;
        } else if (c == ')') {
            while (!ops.empty() && ops.back() != '(') apply();
            if (ops.empty()) throw std::runtime_error("oracle: unbalanced");
            ops.pop_back();
            ++i;
        } else {
            while (!ops.empty() && ops.back() != '(' && prec(ops.back()) >= prec(c)) apply();
            ops.push_back(c);
            ++i;
        }
    }
    while (!ops.empty()) apply();
    if (values.size() != 1) throw std::runtime_error("oracle: malformed");
    return values.back();
}

inline std::string random_infix(std::mt19937& rng, int depth = 0) {
    std::uniform_int_distribution<int> coin(0, 3);
    std::uniform_real_distribution<double> val(0.5, 999.0);
    if (depth > 3 || coin(rng) == 0) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", val(rng));
        return buf;
    }
    static const char ops[] = {'+', '-', '*', '/'};
    std::string lhs = random_infix(rng, depth + 1);
    std::string rhs = random_infix(rng, depth + 1);
    char op = ops[coin(rng)];
    bool paren = coin(rng) < 2;
    std::string s = lhs + " " + op + " " + rhs;
    return paren ? "(" + s + ")" : s;
}

// Random arithmetic tree with number and constant leaves (AVG only after a number).
inline ExprTree random_arith_tree(std::mt19937& rng, int max_depth = 5) {
    std::uniform_int_distribution<int> d4(0, 3), d10(0, 9);
    std::uniform_real_distribution<double> val(-500.0, 500.0);
    std::vector<ExprTree::Node> nodes;
    int numbers = 0;
    std::function<int(int)> build = [&](int depth) -> int {
        int id = static_cast<int>(nodes.size());
        nodes.emplace_back();
        if (depth < max_depth && d4(rng) != 0) {
            static const Op ops[] = {Op::Add, Op::Sub, Op::Mul, Op::Div};
            nodes[id].token = Token::make_op(ops[d4(rng)]);
            int l = build(depth + 1);
            int r = build(depth + 1);
            nodes[id].left = l;
            nodes[id].right = r;
        } else {
            int roll = d10(rng);
            if (roll == 0) {
                nodes[id].token = Token::constant_leaf(Constant::One);
            } else if (roll == 1 && numbers > 0) {
                nodes[id].token = Token::constant_leaf(Constant::Avg);
            } else {
                ++numbers;
                nodes[id].token = Token::number(std::round(val(rng) * 100) / 100, static_cast<std::size_t>(d10(rng)));
            }
        }
        return id;
    };
    int root = build(0);
    return ExprTree(TreeKind::Arithmetic, std::move(nodes), root);
}

}  // namespace reghnt::testing
