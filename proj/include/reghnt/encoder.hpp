#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "reghnt/autodiff.hpp"
#include "reghnt/config.hpp"
#include "reghnt/graph.hpp"
#include "reghnt/tensor.hpp"

namespace reghnt {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Row of the hashed embedding table for one lower-cased subword piece.
std::size_t hash_piece(std::string_view piece, std::uint64_t seed, std::size_t vocab);

// One word of the flattened input: its node, pieces and hashed table rows.
struct WordToken {
    int node = 0;
    bool number = false;
    std::vector<std::string> pieces;
    std::vector<int> rows;
};

// Words in node order: question words, table cells, then per sentence the
// sentence token followed by its words. Empty cells and sentence tokens carry
// a single special piece.
struct TokenLayout {
    std::vector<WordToken> words;
    std::vector<int> node_first_word;  // per node
    std::vector<int> node_num_words;
};

TokenLayout embed_tokens(const HeteroGraph& g, const ModelConfig& cfg);

struct Encoding {
    ad::Var Z;    // (|V| + 1) x d; row 0 is the pooled context vector
    ad::Var cls;  // 1 x d
    ad::Var h_q, h_t, h_p;
    // Per layer, |E| x H attention weights in graph edge order (when requested).
    std::vector<Tensor> attention;
};

struct LstmParams {
    const Parameter* wx = nullptr;  // in x 4h (gates i, f, g, o)
    const Parameter* wh = nullptr;  // h x 4h
    const Parameter* b = nullptr;   // 1 x 4h
};

class Encoder {
public:
    Encoder(ParamStore& store, const ModelConfig& cfg);

    // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices; zero biases and relation
    // tables; unit layer-norm gains.
    void init(std::mt19937_64& rng);

    Encoding encode(ad::Tape& tape, const HeteroGraph& g, bool keep_attention = false) const;

    // Pooled node vectors before the graph layers, |V| x d.
    ad::Var pool(ad::Tape& tape, const HeteroGraph& g, const TokenLayout& layout) const;

    // Single-unit views of the pooling steps.
    ad::Var pool_word(ad::Tape& tape, ad::Var pieces, bool number) const;
    ad::Var pool_node(ad::Tape& tape, ad::Var words, SourceType source) const;

    // Multi-head relation-aware attention output z before the residual block.
    ad::Var relational_attention(ad::Tape& tape, ad::Var x, const HeteroGraph& g, std::size_t layer,
                                 Tensor* attention = nullptr) const;
    ad::Var rgat_layer(ad::Tape& tape, ad::Var x, const HeteroGraph& g, std::size_t layer, Tensor* attention = nullptr) const;

    const ModelConfig& config() const { return cfg_; }

    struct Layer {
        const Parameter *wq, *wk, *wv, *rk, *rv;
        const Parameter *ln1_g, *ln1_b, *w1, *b1, *w2, *b2, *ln2_g, *ln2_b;
    };
    struct Pooler {
        const Parameter* w = nullptr;  // d x d
        const Parameter* v = nullptr;  // d x 1
    };

    const Layer& layer(std::size_t l) const { return layers_.at(l); }
    const Parameter& embedding() const { return *embed_; }

private:
    ad::Var attentive_pool(ad::Tape& tape, ad::Var items, const Pooler& p, const std::vector<int>& segment, std::size_t n) const;
    ad::Var bilstm(ad::Tape& tape, ad::Var words, const std::vector<std::vector<int>>& sequences, SourceType source) const;
    ad::Var lstm_direction(ad::Tape& tape, ad::Var words, const std::vector<std::vector<int>>& sequences, const LstmParams& p) const;

    ModelConfig cfg_;
    const Parameter* embed_ = nullptr;
    std::array<Pooler, 2> word_pool_{};  // text, number
    std::array<Pooler, kNumSourceTypes> node_pool_{};
    std::array<std::array<LstmParams, 2>, kNumSourceTypes> lstm_{};  // forward, backward
    std::vector<Layer> layers_;
    const Parameter *cls_w_ = nullptr, *cls_b_ = nullptr;
    std::vector<Parameter*> owned_;
    std::vector<Parameter*> zero_init_;
    std::vector<Parameter*> one_init_;
};

}  // namespace reghnt
