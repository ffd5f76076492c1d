#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "reghnt/decoder.hpp"
#include "reghnt/encoder.hpp"
#include "reghnt/gradcheck.hpp"
#include "reghnt/metrics.hpp"

namespace reghnt {

// Operator-class labels. The binary head predicts {Arithmetic, Span}; the
// four-class head predicts the dataset answer types.
inline constexpr std::size_t kOpArithmetic = 0;
inline constexpr std::size_t kOpSpan = 1;

std::size_t op_class_of(AnswerType t, bool arithmetic, std::size_t op_classes);
TreeKind tree_kind_of(std::size_t op_class, std::size_t op_classes);
std::string op_class_name(std::size_t op_class, std::size_t op_classes);

struct GoldTarget {
    TreeKind kind = TreeKind::Arithmetic;
    PrefixExpr tokens;
    std::size_t op_class = kOpArithmetic;
    Scale scale = Scale::None;
    // Gold node ranges of span targets, in document order.
    std::vector<std::pair<int, int>> ranges;
};

// Node range [first, last] whose text normalizes to `span`. Table cells are
// searched first, then paragraph sentences, then the question. Ranges listed
// in `taken` are skipped.
std::optional<std::pair<int, int>> locate_span(const HeteroGraph& g, const std::string& span,
                                               const std::vector<std::pair<int, int>>& taken = {});

// Builds the training target. Returns nullopt and sets `reason` when the gold
// expression cannot be expressed over the candidate set.
std::optional<GoldTarget> bind_gold(const HybridExample& ex, const HeteroGraph& g, const NumberIndex& index,
                                    std::size_t op_classes, std::string* reason = nullptr);

// One question with its graph, numbers and (when bindable) target.
struct Prepared {
    HybridExample example;
    HeteroGraph graph;
    NumberIndex index;
    std::optional<GoldTarget> gold;
    std::string skip_reason;
};

Prepared prepare(const HybridExample& ex, const ModelConfig& cfg);
std::vector<Prepared> prepare_all(const std::vector<HybridExample>& examples, const ModelConfig& cfg);

// Two-layer GELU feed-forward classifiers over the encoding.
class Heads {
public:
    Heads(ParamStore& store, const ModelConfig& cfg);
    void init(std::mt19937_64& rng);

    // [cls : h_q : h_t : h_p] -> op-class logits.
    ad::Var op_logits(ad::Tape& tape, const Encoding& enc) const;
    // cls -> scale logits.
    ad::Var scale_logits(ad::Tape& tape, const Encoding& enc) const;
    // Node rows of Z -> |V| x 1 tag logits (span tagging only).
    ad::Var tag_logits(ad::Tape& tape, const Encoding& enc, std::size_t nodes) const;

private:
    struct Ffn {
        const Parameter *w1, *b1, *w2, *b2;
    };
    ad::Var apply(ad::Tape& tape, const Ffn& f, ad::Var x) const;

    ModelConfig cfg_;
    Ffn op_{}, scale_{}, tag_{};
    std::vector<Parameter*> matrices_, zeros_;
};

// -log softmax(logits)[target] for a 1 x k row, computed stably.
ad::Var cross_entropy(ad::Var logits, std::size_t target);
// Mean binary cross-entropy of n x 1 logits against 0/1 labels.
ad::Var binary_cross_entropy(ad::Var logits, const std::vector<double>& labels);

struct LossParts {
    ad::Var tree, op, scale, total;
};

struct Prediction {
    PredictionRecord record;
    std::vector<double> op_probs;
    std::vector<double> scale_probs;
    std::optional<DecodeResult> beam;
    std::optional<DecodeResult> greedy;
    // Node ranges chosen by the tagging head.
    std::vector<std::pair<int, int>> tagged;
    std::string error;
};

class Model {
public:
    explicit Model(const ModelConfig& cfg);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // Initializes every parameter from cfg.init_seed.
    void init();

    LossParts loss(ad::Tape& tape, const Prepared& p) const;
    // Also runs the greedy search when `with_greedy` is set and width > 1.
    Prediction predict(const Prepared& p, std::size_t width, bool with_greedy = false) const;

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    const ModelConfig& config() const { return cfg_; }
    const Encoder& encoder() const { return encoder_; }
    const Decoder& decoder() const { return decoder_; }
    const Heads& heads() const { return heads_; }

    void save(const std::filesystem::path& path) const;
    // Reads the stored config, rebuilds the model and loads its parameters.
    static std::unique_ptr<Model> load(const std::filesystem::path& path);

private:
    ModelConfig cfg_;
    ParamStore store_;
    Encoder encoder_;
    Decoder decoder_;
    Heads heads_;
};

// Finite-difference check of the summed total loss over `data` (no dropout).
GradCheckReport grad_check_model(Model& model, const std::vector<Prepared>& data, const GradCheckOptions& opts = {});

// Spans from tag probabilities: maximal runs of tagged nodes inside one
// question, one table cell or one sentence.
std::vector<std::pair<int, int>> tagged_ranges(const HeteroGraph& g, const std::vector<double>& probs);
std::vector<std::string> range_texts(const HeteroGraph& g, const std::vector<std::pair<int, int>>& ranges);

}  // namespace reghnt
