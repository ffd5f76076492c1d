#include "reghnt/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "reghnt/corpus.hpp"

namespace reghnt {

std::size_t hash_piece(std::string_view piece, std::uint64_t seed, std::size_t vocab) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
    for (unsigned char c : lowercase(piece)) mix(c);
    return static_cast<std::size_t>(h % vocab);
}

TokenLayout embed_tokens(const HeteroGraph& g, const ModelConfig& cfg) {
    TokenLayout out;
    out.node_first_word.resize(g.size());
    out.node_num_words.resize(g.size());
    auto push = [&](int node, std::vector<std::string> pieces, bool number) {
        WordToken w;
        w.node = node;
        w.number = number;
        w.pieces = std::move(pieces);
        for (const auto& p : w.pieces) w.rows.push_back(static_cast<int>(hash_piece(p, cfg.hash_seed, cfg.vocab)));
        out.words.push_back(std::move(w));
    };
    for (const auto& n : g.nodes) {
        out.node_first_word[n.id] = static_cast<int>(out.words.size());
        if (n.type == NodeType::PSentence) {
            push(n.id, {"[SENT]"}, false);
        } else if (n.words.empty()) {
            push(n.id, {"[EMPTY]"}, false);
        } else {
            for (const auto& word : n.words) push(n.id, subword_pieces(word), normalize_number(word).has_value());
        }
        out.node_num_words[n.id] = static_cast<int>(out.words.size()) - out.node_first_word[n.id];
    }
    return out;
}

Encoder::Encoder(ParamStore& store, const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d, hd = d / 2, dz = d / cfg_.heads;
    auto add = [&](const std::string& name, std::size_t r, std::size_t c) -> Parameter* {
        Parameter* p = &store.add(name, r, c);
        owned_.push_back(p);
        return p;
    };
    Parameter* embed = &store.add("embed", cfg_.vocab, d, ParamGroup::Embedding);
    owned_.push_back(embed);
    embed_ = embed;

    static const char* word_names[] = {"text", "number"};
    for (int k = 0; k < 2; ++k) {
        std::string base = std::string("pool.word.") + word_names[k];
        word_pool_[k].w = add(base + ".W", d, d);
        word_pool_[k].v = add(base + ".v", d, 1);
    }
    static const char* source_names[] = {"question", "table", "paragraph"};
    static const char* dir_names[] = {"fw", "bw"};
    for (int s = 0; s < kNumSourceTypes; ++s) {
        std::string base = std::string("pool.node.") + source_names[s];
        for (int dir = 0; dir < 2; ++dir) {
            std::string lb = base + ".lstm." + dir_names[dir];
            lstm_[s][dir].wx = add(lb + ".Wx", d, 4 * hd);
            lstm_[s][dir].wh = add(lb + ".Wh", hd, 4 * hd);
            Parameter* b = add(lb + ".b", 1, 4 * hd);
            zero_init_.push_back(b);
            lstm_[s][dir].b = b;
        }
        node_pool_[s].w = add(base + ".W", d, d);
        node_pool_[s].v = add(base + ".v", d, 1);
    }

    Parameter* shared_rk = nullptr;
    Parameter* shared_rv = nullptr;
    if (cfg_.shared_relations) {
        shared_rk = add("rel.K", kNumRelationIds, dz);
        shared_rv = add("rel.V", kNumRelationIds, dz);
        zero_init_.push_back(shared_rk);
        zero_init_.push_back(shared_rv);
    }
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        std::string b = "rgat" + std::to_string(l) + ".";
        Layer layer{};
        layer.wq = add(b + "Wq", d, d);
        layer.wk = add(b + "Wk", d, d);
        layer.wv = add(b + "Wv", d, d);
        if (cfg_.shared_relations) {
            layer.rk = shared_rk;
            layer.rv = shared_rv;
        } else {
            Parameter* rk = add(b + "rK", kNumRelationIds, dz);
            Parameter* rv = add(b + "rV", kNumRelationIds, dz);
            zero_init_.push_back(rk);
            zero_init_.push_back(rv);
            layer.rk = rk;
            layer.rv = rv;
        }
        Parameter* g1 = add(b + "ln1.g", 1, d);
        Parameter* b1n = add(b + "ln1.b", 1, d);
        layer.w1 = add(b + "ffn.W1", d, cfg_.ffn_mult * d);
        Parameter* fb1 = add(b + "ffn.b1", 1, cfg_.ffn_mult * d);
        layer.w2 = add(b + "ffn.W2", cfg_.ffn_mult * d, d);
        Parameter* fb2 = add(b + "ffn.b2", 1, d);
        Parameter* g2 = add(b + "ln2.g", 1, d);
        Parameter* b2n = add(b + "ln2.b", 1, d);
        layer.ln1_g = g1;
        layer.ln1_b = b1n;
        layer.b1 = fb1;
        layer.b2 = fb2;
        layer.ln2_g = g2;
        layer.ln2_b = b2n;
        one_init_.push_back(g1);
        one_init_.push_back(g2);
        zero_init_.insert(zero_init_.end(), {b1n, fb1, fb2, b2n});
        layers_.push_back(layer);
    }
    cls_w_ = add("cls.W", d, d);
    Parameter* cb = add("cls.b", 1, d);
    zero_init_.push_back(cb);
    cls_b_ = cb;
}

void Encoder::init(std::mt19937_64& rng) {
    for (Parameter* p : owned_) {
        if (std::find(zero_init_.begin(), zero_init_.end(), p) != zero_init_.end()) {
            p->value.fill(0.0);
        } else if (std::find(one_init_.begin(), one_init_.end(), p) != one_init_.end()) {
            p->value.fill(1.0);
        } else {
            std::size_t fan = p == embed_ ? cfg_.d : p->value.rows;
            ParamStore::init_uniform(*p, 1.0 / std::sqrt(static_cast<double>(fan)), rng);
        }
    }
}

ad::Var Encoder::attentive_pool(ad::Tape& tape, ad::Var items, const Pooler& p, const std::vector<int>& segment,
                                std::size_t n) const {
    ad::Var scores = ad::matmul(ad::tanh(ad::matmul(items, tape.param(*p.w))), tape.param(*p.v));
    ad::Var alpha = ad::segment_softmax(scores, segment, n);
    return ad::segment_sum(ad::headwise_scale(alpha, items), segment, n);
}

namespace {

ad::Var mean_pool(ad::Tape& tape, ad::Var items, const std::vector<int>& segment, std::size_t n) {
    std::vector<double> count(n, 0.0);
    for (int s : segment) count[s] += 1.0;
    Tensor w(segment.size(), 1);
    for (std::size_t i = 0; i < segment.size(); ++i) w.data[i] = 1.0 / count[segment[i]];
    return ad::segment_sum(ad::headwise_scale(tape.constant(std::move(w)), items), segment, n);
}

}  // namespace

ad::Var Encoder::lstm_direction(ad::Tape& tape, ad::Var words, const std::vector<std::vector<int>>& sequences,
                                const LstmParams& p) const {
    const std::size_t hd = cfg_.d / 2;
    std::vector<std::size_t> order(sequences.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sequences[a].size() > sequences[b].size(); });
    std::size_t max_len = sequences.empty() ? 0 : sequences[order[0]].size();

    ad::Var wx = tape.param(*p.wx), wh = tape.param(*p.wh), b = tape.param(*p.b);
    ad::Var h = tape.zeros(sequences.size(), hd);
    ad::Var c = h;
    std::vector<ad::Var> outputs;
    // Output row of each (sequence, step) in the concatenation of `outputs`.
    std::vector<std::vector<int>> out_row(sequences.size());
    for (std::size_t k = 0; k < sequences.size(); ++k) out_row[k].resize(sequences[k].size());
    int offset = 0;
    for (std::size_t t = 0; t < max_len; ++t) {
        std::size_t active = 0;
        while (active < order.size() && sequences[order[active]].size() > t) ++active;
        std::vector<int> rows(active);
        for (std::size_t k = 0; k < active; ++k) {
            rows[k] = sequences[order[k]][t];
            out_row[order[k]][t] = offset + static_cast<int>(k);
        }
        if (h.rows() != active) {
            h = ad::slice_rows(h, 0, active);
            c = ad::slice_rows(c, 0, active);
        }
        ad::Var gates = ad::add(ad::add(ad::matmul(ad::gather_rows(words, rows), wx), ad::matmul(h, wh)), b);
        ad::Var i = ad::sigmoid(ad::slice_cols(gates, 0, hd));
        ad::Var f = ad::sigmoid(ad::slice_cols(gates, hd, hd));
        ad::Var g = ad::tanh(ad::slice_cols(gates, 2 * hd, hd));
        ad::Var o = ad::sigmoid(ad::slice_cols(gates, 3 * hd, hd));
        c = ad::add(ad::mul(f, c), ad::mul(i, g));
        h = ad::mul(o, ad::tanh(c));
        outputs.push_back(h);
        offset += static_cast<int>(active);
    }
    // Rows back in sequence order, sequences concatenated.
    std::vector<int> gather;
    for (std::size_t k = 0; k < sequences.size(); ++k) gather.insert(gather.end(), out_row[k].begin(), out_row[k].end());
    return ad::gather_rows(ad::concat_rows(outputs), gather);
}

ad::Var Encoder::bilstm(ad::Tape& tape, ad::Var words, const std::vector<std::vector<int>>& sequences, SourceType source) const {
    const auto& params = lstm_[static_cast<int>(source)];
    ad::Var fw = lstm_direction(tape, words, sequences, params[0]);
    std::vector<std::vector<int>> reversed = sequences;
    for (auto& s : reversed) std::reverse(s.begin(), s.end());
    ad::Var bw = lstm_direction(tape, words, reversed, params[1]);
    // Backward outputs come out in reversed order within each sequence; flip them back.
    std::vector<int> flip;
    int offset = 0;
    for (const auto& s : sequences) {
        int n = static_cast<int>(s.size());
        for (int i = 0; i < n; ++i) flip.push_back(offset + n - 1 - i);
        offset += n;
    }
    return ad::concat_cols({fw, ad::gather_rows(bw, flip)});
}

ad::Var Encoder::pool_word(ad::Tape& tape, ad::Var pieces, bool number) const {
    std::vector<int> seg(pieces.rows(), 0);
    if (!cfg_.type_pooling) return mean_pool(tape, pieces, seg, 1);
    return attentive_pool(tape, pieces, word_pool_[number ? 1 : 0], seg, 1);
}

ad::Var Encoder::pool_node(ad::Tape& tape, ad::Var words, SourceType source) const {
    std::vector<int> seg(words.rows(), 0);
    if (!cfg_.type_pooling) return mean_pool(tape, words, seg, 1);
    std::vector<int> seq(words.rows());
    std::iota(seq.begin(), seq.end(), 0);
    ad::Var states = bilstm(tape, words, {seq}, source);
    return attentive_pool(tape, states, node_pool_[static_cast<int>(source)], seg, 1);
}

ad::Var Encoder::pool(ad::Tape& tape, const HeteroGraph& g, const TokenLayout& layout) const {
    std::vector<int> rows, piece_word;
    std::vector<double> mask;
    for (std::size_t w = 0; w < layout.words.size(); ++w) {
        for (int r : layout.words[w].rows) {
            rows.push_back(r);
            piece_word.push_back(static_cast<int>(w));
            mask.push_back(layout.words[w].number ? 1.0 : 0.0);
        }
    }
    const std::size_t num_words = layout.words.size();
    ad::Var pieces = tape.gather_param_rows(*embed_, rows);

    ad::Var words;
    if (!cfg_.type_pooling) {
        words = mean_pool(tape, pieces, piece_word, num_words);
    } else {
        auto score = [&](const Pooler& p) {
            return ad::matmul(ad::tanh(ad::matmul(pieces, tape.param(*p.w))), tape.param(*p.v));
        };
        Tensor m(mask.size(), 1);
        m.data = mask;
        ad::Var num_mask = tape.constant(m);
        ad::Var scores = ad::add(ad::mul(score(word_pool_[1]), num_mask), ad::mul(score(word_pool_[0]), ad::one_minus(num_mask)));
        ad::Var alpha = ad::segment_softmax(scores, piece_word, num_words);
        words = ad::segment_sum(ad::headwise_scale(alpha, pieces), piece_word, num_words);
    }

    // Node pooling per source type; nodes of one source are contiguous.
    std::vector<ad::Var> parts;
    std::size_t begin = 0;
    while (begin < g.size()) {
        SourceType src = g.nodes[begin].source;
        std::size_t end = begin;
        while (end < g.size() && g.nodes[end].source == src) ++end;
        std::vector<std::vector<int>> sequences;
        std::vector<int> seg;
        for (std::size_t n = begin; n < end; ++n) {
            std::vector<int> seq(layout.node_num_words[n]);
            std::iota(seq.begin(), seq.end(), layout.node_first_word[n]);
            seg.insert(seg.end(), seq.size(), static_cast<int>(n - begin));
            sequences.push_back(std::move(seq));
        }
        if (!cfg_.type_pooling) {
            std::vector<int> flat;
            for (const auto& s : sequences) flat.insert(flat.end(), s.begin(), s.end());
            parts.push_back(mean_pool(tape, ad::gather_rows(words, flat), seg, end - begin));
        } else {
            ad::Var states = bilstm(tape, words, sequences, src);
            parts.push_back(attentive_pool(tape, states, node_pool_[static_cast<int>(src)], seg, end - begin));
        }
        begin = end;
    }
    return parts.size() == 1 ? parts[0] : ad::concat_rows(parts);
}

ad::Var Encoder::relational_attention(ad::Tape& tape, ad::Var x, const HeteroGraph& g, std::size_t l, Tensor* attention) const {
    const Layer& p = layers_.at(l);
    const std::size_t n = g.size();
    const std::size_t heads = cfg_.heads;
    std::vector<int> src, dst, rel;
    src.reserve(g.edges.size());
    for (const auto& e : g.edges) {
        src.push_back(e.src);
        dst.push_back(e.dst);
        rel.push_back(e.relation_id());
    }
    ad::Var q = ad::matmul(x, tape.param(*p.wq));
    ad::Var k = ad::matmul(x, tape.param(*p.wk));
    ad::Var v = ad::matmul(x, tape.param(*p.wv));
    ad::Var rk = ad::tile_cols(ad::gather_rows(tape.param(*p.rk), rel), heads);
    ad::Var rv = ad::tile_cols(ad::gather_rows(tape.param(*p.rv), rel), heads);

    ad::Var qe = ad::gather_rows(q, dst);
    ad::Var ke = ad::add(ad::gather_rows(k, src), rk);
    double inv = 1.0 / std::sqrt(static_cast<double>(cfg_.d / heads));
    ad::Var scores = ad::scale(ad::headwise_dot(qe, ke, heads), inv);
    const Tensor& sv = scores.value();
    for (std::size_t e = 0; e < sv.rows; ++e) {
        for (std::size_t h = 0; h < sv.cols; ++h) {
            if (!std::isfinite(sv(e, h))) {
                throw NumericError("non-finite attention score at layer " + std::to_string(l) + ", node " +
                                   std::to_string(dst[e]) + ", edge " + std::to_string(e) + " (from node " +
                                   std::to_string(src[e]) + ")");
            }
        }
    }
    ad::Var alpha = ad::segment_softmax(scores, dst, n);
    if (attention) *attention = alpha.value();
    ad::Var ve = ad::add(ad::gather_rows(v, src), rv);
    return ad::segment_sum(ad::headwise_scale(alpha, ve), dst, n);
}

ad::Var Encoder::rgat_layer(ad::Tape& tape, ad::Var x, const HeteroGraph& g, std::size_t l, Tensor* attention) const {
    const Layer& p = layers_.at(l);
    ad::Var z = relational_attention(tape, x, g, l, attention);

    ad::Var h1 = ad::layer_norm(ad::add(x, ad::dropout(z, cfg_.feature_dropout)), tape.param(*p.ln1_g), tape.param(*p.ln1_b));
    ad::Var ff = ad::linear(ad::gelu(ad::linear(h1, tape.param(*p.w1), tape.param(*p.b1))), tape.param(*p.w2), tape.param(*p.b2));
    return ad::layer_norm(ad::add(h1, ad::dropout(ff, cfg_.feature_dropout)), tape.param(*p.ln2_g), tape.param(*p.ln2_b));
}

Encoding Encoder::encode(ad::Tape& tape, const HeteroGraph& g, bool keep_attention) const {
    if (g.size() == 0) throw StructureError("cannot encode an empty graph");
    TokenLayout layout = embed_tokens(g, cfg_);
    ad::Var x = ad::dropout(pool(tape, g, layout), cfg_.feature_dropout);
    Encoding enc;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        Tensor att;
        x = rgat_layer(tape, x, g, l, keep_attention ? &att : nullptr);
        if (keep_attention) enc.attention.push_back(std::move(att));
    }
    enc.cls = ad::tanh(ad::linear(ad::mean_rows(x), tape.param(*cls_w_), tape.param(*cls_b_)));
    enc.Z = ad::concat_rows({enc.cls, x});
    auto source_mean = [&](std::size_t start, std::size_t count) {
        return count == 0 ? tape.zeros(1, cfg_.d) : ad::mean_rows(ad::slice_rows(x, start, count));
    };
    enc.h_q = source_mean(0, g.num_question);
    enc.h_t = source_mean(g.num_question, g.num_table);
    enc.h_p = source_mean(g.num_question + g.num_table, g.size() - g.num_question - g.num_table);
    return enc;
}

}  // namespace reghnt
