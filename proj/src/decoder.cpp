#include "reghnt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace reghnt {

namespace {

constexpr Op kArithOps[] = {Op::Add, Op::Sub, Op::Mul, Op::Div};
constexpr Op kSpanOps[] = {Op::Add, Op::Mul, Op::Count};

}  // namespace

Decoder::Decoder(ParamStore& store, const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg_.d;
    auto mat = [&](const std::string& name, std::size_t r, std::size_t c) {
        Parameter* p = &store.add("dec." + name, r, c);
        matrices_.push_back(p);
        return p;
    };
    auto zero = [&](const std::string& name, std::size_t r, std::size_t c) {
        Parameter* p = &store.add("dec." + name, r, c);
        zeros_.push_back(p);
        return p;
    };
    m_op_ = mat("M_op", 4, d);
    m_con_ = mat("M_con", 5, d);
    start_ = mat("start", 1, d);
    gru_wx_ = mat("gru.Wx", 3 * d, 3 * d);
    gru_wh_ = mat("gru.Wh", d, 3 * d);
    gru_bx_ = zero("gru.bx", 1, 3 * d);
    gru_bh_ = zero("gru.bh", 1, 3 * d);
    wg_ = mat("Wg", 4 * d, d);
    wh_ = mat("Wh", d, d);
    ws_ = mat("Ws", 2 * d, d);
    u_ = mat("u", d, 1);
    wz_ = mat("Wz", 3 * d, 1);
    bz_ = zero("bz", 1, 1);
    f_w1_ = mat("f.W1", 3 * d, d);
    f_b1_ = zero("f.b1", 1, d);
    f_arith_w2_ = mat("f.arith.W2", d, kArithGenerate);
    f_arith_b2_ = zero("f.arith.b2", 1, kArithGenerate);
    f_span_w2_ = mat("f.span.W2", d, kSpanGenerate);
    f_span_b2_ = zero("f.span.b2", 1, kSpanGenerate);
}

void Decoder::init(std::mt19937_64& rng) {
    for (Parameter* p : matrices_) {
        std::size_t fan = p->value.rows <= 5 ? cfg_.d : p->value.rows;
        ParamStore::init_uniform(*p, 1.0 / std::sqrt(static_cast<double>(fan)), rng);
    }
    for (Parameter* p : zeros_) p->value.fill(0.0);
}

DecoderContext Decoder::context(ad::Tape& tape, const Encoding& enc, const HeteroGraph& g, const NumberIndex& index,
                                TreeKind kind) const {
    DecoderContext ctx;
    ctx.kind = kind;
    ctx.encoding = &enc;
    ctx.graph = &g;
    ctx.index = &index;
    ctx.nodes = ad::slice_rows(enc.Z, 1, g.size());
    ctx.nodes_wh = ad::matmul(ctx.nodes, tape.param(*wh_));
    if (kind == TreeKind::Arithmetic) {
        ctx.num_generate = kArithGenerate;
        for (std::size_t j = 0; j < index.size(); ++j) {
            ctx.entry_node.push_back(g.node_of(index.entries[j].location));
            std::size_t rep = index.find(index.entries[j].value).value_or(j);
            auto it = std::find(ctx.group_entry.begin(), ctx.group_entry.end(), rep);
            if (it == ctx.group_entry.end()) {
                ctx.entry_group.push_back(static_cast<int>(ctx.group_entry.size()));
                ctx.group_entry.push_back(rep);
            } else {
                ctx.entry_group.push_back(static_cast<int>(it - ctx.group_entry.begin()));
            }
        }
        ctx.num_copy = ctx.group_entry.size();
        if (ctx.num_copy > 0) {
            Tensor m(g.size(), ctx.num_copy);
            for (std::size_t j = 0; j < index.size(); ++j) m(ctx.entry_node[j], ctx.entry_group[j]) = 1.0;
            ctx.group_of_node = tape.constant(std::move(m));
        }
    } else {
        ctx.num_generate = kSpanGenerate;
        ctx.num_copy = g.size();
    }
    return ctx;
}

DecoderState Decoder::initial_state(ad::Tape& tape, const DecoderContext& ctx) const {
    DecoderState st;
    st.s = ctx.encoding->cls;
    st.r = tape.param(*start_);
    st.g = tape.zeros(1, cfg_.d);
    st.stack.push_back(Slot{ctx.kind == TreeKind::Arithmetic ? SlotKind::Any : SlotKind::SpanRoot, -1, false});
    return st;
}

StepOutput Decoder::step(ad::Tape& tape, const DecoderContext& ctx, const DecoderState& st) const {
    if (st.complete()) throw DecodeError("step on a complete expression");
    StepOutput out;
    ad::Var query = ad::matmul(ad::concat_cols({st.s, st.r}), tape.param(*ws_));
    ad::Var scores = ad::matmul(ad::tanh(ad::add(ctx.nodes_wh, query)), tape.param(*u_));
    out.alpha = ad::softmax_rows(ad::transpose(scores));
    out.context = ad::matmul(out.alpha, ctx.nodes);
    ad::Var features = ad::concat_cols({st.s, out.context, st.r});
    out.gate = ad::sigmoid(ad::add(ad::matmul(features, tape.param(*wz_)), tape.param(*bz_)));
    ad::Var hidden = ad::tanh(ad::linear(features, tape.param(*f_w1_), tape.param(*f_b1_)));
    bool arith = ctx.kind == TreeKind::Arithmetic;
    out.gen = ad::softmax_rows(ad::linear(hidden, tape.param(arith ? *f_arith_w2_ : *f_span_w2_),
                                          tape.param(arith ? *f_arith_b2_ : *f_span_b2_)));
    ad::Var gen_part = ad::mul(out.gen, ad::one_minus(out.gate));
    if (ctx.num_copy == 0) {
        out.probs = gen_part;
    } else {
        ad::Var copy = arith ? ad::matmul(out.alpha, ctx.group_of_node) : out.alpha;
        out.probs = ad::concat_cols({gen_part, ad::mul(copy, out.gate)});
    }
    return out;
}

std::size_t Decoder::min_cost(const DecoderContext&, SlotKind k) const {
    switch (k) {
    case SlotKind::SpanRoot:
    case SlotKind::SpanExpr: return 3;
    default: return 1;
    }
}

std::vector<bool> Decoder::legal(const DecoderContext& ctx, const DecoderState& st) const {
    std::vector<bool> ok(ctx.size(), false);
    if (st.complete()) return ok;
    const Slot& cur = st.stack.back();
    std::size_t rest = 0;
    for (std::size_t i = 0; i + 1 < st.stack.size(); ++i) rest += min_cost(ctx, st.stack[i].kind);
    const std::size_t used = st.emitted.size() + rest;
    auto fits = [&](std::size_t cost) { return used + cost <= cfg_.max_len; };

    if (ctx.kind == TreeKind::Arithmetic) {
        for (std::size_t c = 0; c < 4; ++c) ok[c] = fits(3);
        ok[4] = fits(1);
        ok[5] = fits(1) && st.numbers_emitted > 0;
        for (std::size_t c = kArithGenerate; c < ctx.size(); ++c) ok[c] = fits(1);
        return ok;
    }
    switch (cur.kind) {
    case SlotKind::SpanRoot:
        ok[0] = fits(7);
        ok[1] = fits(3);
        ok[2] = fits(7);
        break;
    case SlotKind::SpanExpr:
        ok[0] = fits(7);
        ok[1] = fits(3);
        break;
    case SlotKind::NodeLeft:
        for (std::size_t c = kSpanGenerate; c < ctx.size(); ++c) ok[c] = fits(1);
        break;
    case SlotKind::NodeRight: {
        int left = st.emitted.at(st.left_child.at(cur.parent)).node_id;
        for (std::size_t c = kSpanGenerate + static_cast<std::size_t>(left); c < ctx.size(); ++c) ok[c] = fits(1);
        break;
    }
    case SlotKind::Any: break;
    }
    return ok;
}

Token Decoder::candidate_token(const DecoderContext& ctx, std::size_t c) const {
    if (c >= ctx.size()) throw DecodeError("candidate out of range");
    if (ctx.kind == TreeKind::Arithmetic) {
        if (c < 4) return Token::make_op(kArithOps[c]);
        if (c == 4) return Token::constant_leaf(Constant::One);
        if (c == 5) return Token::constant_leaf(Constant::Avg);
        std::size_t e = ctx.group_entry[c - kArithGenerate];
        return Token::number(ctx.index->entries[e].value, e);
    }
    if (c < kSpanGenerate) return Token::make_op(kSpanOps[c]);
    return Token::node(static_cast<int>(c - kSpanGenerate));
}

std::size_t Decoder::candidate_of(const DecoderContext& ctx, const Token& t) const {
    if (ctx.kind == TreeKind::Arithmetic) {
        switch (t.kind) {
        case Token::Kind::Operator:
            for (std::size_t i = 0; i < 4; ++i)
                if (kArithOps[i] == t.op) return i;
            break;
        case Token::Kind::Const: return t.constant == Constant::One ? 4 : 5;
        case Token::Kind::Number:
            if (t.entry && *t.entry < ctx.entry_group.size()) return kArithGenerate + ctx.entry_group[*t.entry];
            throw DecodeError("number " + format_number(t.value) + " is not bound to the number index");
        case Token::Kind::NodeId: break;
        }
        throw DecodeError("token not in the arithmetic vocabulary");
    }
    if (t.kind == Token::Kind::Operator) {
        for (std::size_t i = 0; i < kSpanGenerate; ++i)
            if (kSpanOps[i] == t.op) return i;
    }
    if (t.kind == Token::Kind::NodeId && t.node_id >= 0 && static_cast<std::size_t>(t.node_id) < ctx.num_copy)
        return kSpanGenerate + static_cast<std::size_t>(t.node_id);
    throw DecodeError("token not in the span vocabulary");
}

ad::Var Decoder::embed(ad::Tape& tape, const DecoderContext& ctx, std::size_t c) const {
    if (ctx.kind == TreeKind::Arithmetic) {
        if (c < 4) return ad::gather_rows(tape.param(*m_op_), {static_cast<int>(c)});
        if (c < kArithGenerate) return ad::gather_rows(tape.param(*m_con_), {static_cast<int>(c - 4)});
        int node = ctx.entry_node[ctx.group_entry[c - kArithGenerate]];
        return ad::slice_rows(ctx.nodes, static_cast<std::size_t>(node), 1);
    }
    if (c < kSpanGenerate) return ad::gather_rows(tape.param(*m_con_), {static_cast<int>(2 + c)});
    return ad::slice_rows(ctx.nodes, c - kSpanGenerate, 1);
}

DecoderState Decoder::advance(ad::Tape& tape, const DecoderContext& ctx, const DecoderState& st, std::size_t c,
                              const StepOutput& out) const {
    if (st.complete()) throw DecodeError("advance on a complete expression");
    const std::size_t d = cfg_.d;
    Token tok = candidate_token(ctx, c);
    ad::Var e = embed(tape, ctx, c);
    DecoderState next = st;
    Slot cur = next.stack.back();
    next.stack.pop_back();
    int idx = static_cast<int>(next.emitted.size());

    ad::Var zero = tape.zeros(1, d);
    ad::Var g_parent = cur.parent >= 0 ? st.node_g[cur.parent] : zero;
    ad::Var g_left = zero;
    if (cur.right && cur.parent >= 0 && st.left_child[cur.parent] >= 0) g_left = st.node_g[st.left_child[cur.parent]];
    ad::Var g_new = ad::sigmoid(ad::matmul(ad::concat_cols({st.g, g_parent, g_left, zero}), tape.param(*wg_)));
    if (cur.parent >= 0 && !cur.right) next.left_child[cur.parent] = idx;
    next.emitted.push_back(tok);
    next.node_g.push_back(g_new);
    next.left_child.push_back(-1);
    if (tok.kind == Token::Kind::Number) ++next.numbers_emitted;
    if (tok.is_operator()) {
        SlotKind lk = SlotKind::Any, rk = SlotKind::Any;
        if (ctx.kind == TreeKind::Span) {
            if (tok.op == Op::Mul) {
                lk = SlotKind::NodeLeft;
                rk = SlotKind::NodeRight;
            } else {
                lk = rk = SlotKind::SpanExpr;
            }
        }
        next.stack.push_back(Slot{rk, idx, true});
        next.stack.push_back(Slot{lk, idx, false});
    }

    ad::Var x = ad::concat_cols({out.context, st.g, e});
    ad::Var h = ad::dropout(st.s, cfg_.recurrent_dropout);
    ad::Var gx = ad::linear(x, tape.param(*gru_wx_), tape.param(*gru_bx_));
    ad::Var gh = ad::linear(h, tape.param(*gru_wh_), tape.param(*gru_bh_));
    ad::Var reset = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, d), ad::slice_cols(gh, 0, d)));
    ad::Var update = ad::sigmoid(ad::add(ad::slice_cols(gx, d, d), ad::slice_cols(gh, d, d)));
    ad::Var cand = ad::tanh(ad::add(ad::slice_cols(gx, 2 * d, d), ad::mul(reset, ad::slice_cols(gh, 2 * d, d))));
    next.s = ad::add(ad::mul(ad::one_minus(update), cand), ad::mul(update, h));
    next.g = g_new;
    next.r = e;
    next.logp = st.logp + std::log(out.probs.value().data[c]);
    return next;
}

ad::Var Decoder::teacher_forced_loss(ad::Tape& tape, const DecoderContext& ctx, const PrefixExpr& gold,
                                     DecoderState* final_state) const {
    if (gold.empty()) throw DecodeError("empty gold expression");
    DecoderState st = initial_state(tape, ctx);
    std::vector<ad::Var> picks;
    for (const Token& t : gold) {
        if (st.complete()) throw DecodeError("gold expression continues past a complete tree");
        StepOutput out = step(tape, ctx, st);
        std::size_t c = candidate_of(ctx, t);
        picks.push_back(ad::log(ad::pick(out.probs, 0, c)));
        st = advance(tape, ctx, st, c, out);
    }
    if (!st.complete()) throw DecodeError("gold expression is incomplete");
    if (final_state) *final_state = st;
    return ad::scale(ad::sum(ad::concat_cols(picks)), -1.0);
}

double Decoder::sequence_logp(ad::Tape& tape, const DecoderContext& ctx, const PrefixExpr& tokens) const {
    DecoderState st = initial_state(tape, ctx);
    for (const Token& t : tokens) {
        StepOutput out = step(tape, ctx, st);
        st = advance(tape, ctx, st, candidate_of(ctx, t), out);
    }
    return st.logp;
}

namespace {

struct Expansion {
    double logp;
    std::size_t hyp;
    std::size_t candidate;
};

}  // namespace

DecodeResult Decoder::decode(ad::Tape& tape, const DecoderContext& ctx, std::size_t width) const {
    if (width == 0) throw std::invalid_argument("beam width must be positive");
    auto search = [&](std::size_t w) {
        std::vector<DecoderState> live{initial_state(tape, ctx)};
        std::vector<DecoderState> finished;
        double best_finished = -std::numeric_limits<double>::infinity();
        while (!live.empty()) {
            std::vector<StepOutput> outs;
            std::vector<Expansion> exp;
            for (std::size_t h = 0; h < live.size(); ++h) {
                outs.push_back(step(tape, ctx, live[h]));
                auto ok = legal(ctx, live[h]);
                const Tensor& p = outs.back().probs.value();
                for (std::size_t c = 0; c < ok.size(); ++c) {
                    if (ok[c] && p.data[c] > 0.0) exp.push_back({live[h].logp + std::log(p.data[c]), h, c});
                }
            }
            std::stable_sort(exp.begin(), exp.end(), [](const Expansion& a, const Expansion& b) { return a.logp > b.logp; });
            if (exp.size() > w) exp.resize(w);
            std::vector<DecoderState> next;
            for (const auto& x : exp) {
                if (x.logp <= best_finished) continue;
                DecoderState ns = advance(tape, ctx, live[x.hyp], x.candidate, outs[x.hyp]);
                if (ns.complete()) {
                    best_finished = std::max(best_finished, ns.logp);
                    finished.push_back(std::move(ns));
                } else {
                    next.push_back(std::move(ns));
                }
            }
            live = std::move(next);
        }
        if (finished.empty()) throw DecodeError("no completable expression within the length cap");
        auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const DecoderState& a, const DecoderState& b) { return a.logp < b.logp; });
        return DecodeResult{best->emitted, best->logp};
    };
    DecodeResult result = search(width);
    if (width > 1) {
        DecodeResult greedy = search(1);
        if (greedy.logp > result.logp) result = greedy;
    }
    return result;
}

}  // namespace reghnt
