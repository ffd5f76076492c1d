#pragma once

// Reverse-mode differentiation over dense matrices. Every op records its value
// and a hand-written backward rule on a Tape; Tape::backward replays the rules
// in reverse and accumulates parameter gradients into a Gradients sink.

#include <cstddef>
#include <functional>
#include <random>
#include <unordered_map>
#include <vector>

#include "reghnt/tensor.hpp"

namespace reghnt::ad {

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows; }
    std::size_t cols() const { return value().cols; }
    double scalar() const { return value().data.at(0); }
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    using Backward = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var zeros(std::size_t rows, std::size_t cols) { return constant(Tensor(rows, cols)); }
    // Leaf bound to a parameter; one leaf per parameter per tape.
    Var param(const Parameter& p);
    // Rows of a (large) parameter table without copying the whole table.
    Var gather_param_rows(const Parameter& p, const std::vector<int>& rows);

    Var record(Tensor value, Backward backward);

    // Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients into `sink`.
    void backward(Var loss, Gradients& sink);

    const Tensor& value(int id) const { return nodes_[id].value; }
    Tensor& grad(int id) { return nodes_[id].grad; }
    Gradients& sink() { return *sink_; }
    std::size_t size() const { return nodes_.size(); }

    // Dropout is active only when training is on.
    bool training = false;
    std::mt19937_64 rng{0};

private:
    struct Node {
        Tensor value;
        Tensor grad;
        Backward backward;
        const Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> param_cache_;
    Gradients* sink_ = nullptr;
};

Var matmul(Var a, Var b);
// Elementwise with broadcasting of `b` when it is 1x1 or a single row.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);
Var log(Var a);
Var softmax_rows(Var a);
Var transpose(Var a);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
Var slice_cols(Var a, std::size_t start, std::size_t count);
Var gather_rows(Var a, const std::vector<int>& rows);
// out[segment[i]] += a[i]; `n` output rows.
Var segment_sum(Var a, const std::vector<int>& segment, std::size_t n);
// Softmax over the rows sharing a segment id, independently per column.
Var segment_softmax(Var a, const std::vector<int>& segment, std::size_t n);
// a, b: E x d split into `heads` contiguous blocks -> E x heads block dot products.
Var headwise_dot(Var a, Var b, std::size_t heads);
// alpha: E x heads, v: E x d -> each head block of v scaled by its alpha.
Var headwise_scale(Var alpha, Var v);
Var tile_cols(Var a, std::size_t times);
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);
Var mean_rows(Var a);
Var sum(Var a);
Var pick(Var a, std::size_t r, std::size_t c);
Var dropout(Var a, double p);

inline Var linear(Var x, Var w, Var b) { return add(matmul(x, w), b); }

}  // namespace reghnt::ad
