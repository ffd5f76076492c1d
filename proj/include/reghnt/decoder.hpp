#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

#include "reghnt/autodiff.hpp"
#include "reghnt/config.hpp"
#include "reghnt/encoder.hpp"
#include "reghnt/expr.hpp"

namespace reghnt {

class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Candidate set of one decoding problem: the generate vocabulary of the tree
// kind followed by the copy candidates. Arithmetic copies are value groups of
// the NumberIndex (entries with equal value share one candidate); span copies
// are graph nodes.
struct DecoderContext {
    TreeKind kind = TreeKind::Arithmetic;
    const Encoding* encoding = nullptr;
    const HeteroGraph* graph = nullptr;
    const NumberIndex* index = nullptr;
    ad::Var nodes;     // |V| x d node rows of Z
    ad::Var nodes_wh;  // nodes W_h
    ad::Var group_of_node;  // |V| x groups indicator (arithmetic only)
    std::vector<int> entry_node;   // graph node of each index entry
    std::vector<int> entry_group;  // value group of each index entry
    std::vector<std::size_t> group_entry;  // representative (first) entry of each group
    std::size_t num_generate = 0;
    std::size_t num_copy = 0;
    std::size_t size() const { return num_generate + num_copy; }
};

// Generate vocabularies, in candidate order.
inline constexpr std::size_t kArithGenerate = 6;  // + - × ÷ CONST_1 AVG
inline constexpr std::size_t kSpanGenerate = 3;   // + × C

enum class SlotKind { Any, SpanRoot, SpanExpr, NodeLeft, NodeRight };

struct Slot {
    SlotKind kind = SlotKind::Any;
    int parent = -1;  // index into DecoderState::emitted
    bool right = false;
};

struct DecoderState {
    ad::Var s, g, r;
    std::vector<Slot> stack;  // back() is the slot generated next
    PrefixExpr emitted;
    std::vector<ad::Var> node_g;  // tree state of each emitted token
    std::vector<int> left_child;  // per emitted token, -1 when none yet
    std::size_t numbers_emitted = 0;
    double logp = 0.0;
    bool complete() const { return stack.empty(); }
};

struct StepOutput {
    ad::Var probs;   // 1 x candidates: p_c * copy + (1 - p_c) * generate
    ad::Var alpha;   // 1 x |V| context attention
    ad::Var gen;     // 1 x generate vocabulary
    ad::Var gate;    // 1 x 1 copy gate p_c
    ad::Var context; // 1 x d
};

struct DecodeResult {
    PrefixExpr tokens;
    double logp = 0.0;
};

class Decoder {
public:
    Decoder(ParamStore& store, const ModelConfig& cfg);
    void init(std::mt19937_64& rng);

    DecoderContext context(ad::Tape& tape, const Encoding& enc, const HeteroGraph& g, const NumberIndex& index,
                           TreeKind kind) const;
    DecoderState initial_state(ad::Tape& tape, const DecoderContext& ctx) const;
    StepOutput step(ad::Tape& tape, const DecoderContext& ctx, const DecoderState& st) const;
    // Legal candidates for the pending slot under the grammar and the length cap.
    std::vector<bool> legal(const DecoderContext& ctx, const DecoderState& st) const;
    // Emits candidate `c` and returns the successor state.
    DecoderState advance(ad::Tape& tape, const DecoderContext& ctx, const DecoderState& st, std::size_t c,
                         const StepOutput& out) const;

    ad::Var embed(ad::Tape& tape, const DecoderContext& ctx, std::size_t candidate) const;
    Token candidate_token(const DecoderContext& ctx, std::size_t candidate) const;
    // Candidate of a gold token; throws DecodeError for tokens outside the candidate set.
    std::size_t candidate_of(const DecoderContext& ctx, const Token& t) const;

    // -sum_t log P(y_t | y_<t) under teacher forcing.
    ad::Var teacher_forced_loss(ad::Tape& tape, const DecoderContext& ctx, const PrefixExpr& gold,
                                DecoderState* final_state = nullptr) const;

    DecodeResult decode(ad::Tape& tape, const DecoderContext& ctx, std::size_t width) const;
    // Sum of log P of a fixed token sequence (no masking).
    double sequence_logp(ad::Tape& tape, const DecoderContext& ctx, const PrefixExpr& tokens) const;

    const ModelConfig& config() const { return cfg_; }

private:
    std::size_t min_cost(const DecoderContext& ctx, SlotKind k) const;

    ModelConfig cfg_;
    const Parameter *m_op_, *m_con_, *start_;
    const Parameter *gru_wx_, *gru_wh_, *gru_bx_, *gru_bh_;
    const Parameter *wg_, *wh_, *ws_, *u_, *wz_, *bz_;
    const Parameter *f_w1_, *f_b1_, *f_arith_w2_, *f_arith_b2_, *f_span_w2_, *f_span_b2_;
    std::vector<Parameter*> matrices_, zeros_;
};

}  // namespace reghnt
