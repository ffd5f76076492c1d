#include "reghnt/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace reghnt {

namespace {

const char* const kOpNames2[] = {"arithmetic", "span"};
const char* const kOpNames4[] = {"arithmetic", "span", "multi-span", "count"};

std::string joined_norm(const std::string& text) {
    std::string out;
    for (const auto& t : normalize_span(text)) {
        if (!out.empty()) out.push_back(' ');
        out += t;
    }
    return out;
}

bool taken_range(const std::vector<std::pair<int, int>>& taken, std::pair<int, int> r) {
    return std::find(taken.begin(), taken.end(), r) != taken.end();
}

// Contiguous word ranges of one unit (question or sentence) matching `target`.
std::optional<std::pair<int, int>> match_words(const HeteroGraph& g, const std::vector<int>& ids,
                                               const std::vector<std::string>& target,
                                               const std::vector<std::pair<int, int>>& taken) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<std::string> acc = normalize_span(g.nodes[ids[i]].text);
        if (acc.empty()) continue;
        for (std::size_t j = i; j < ids.size(); ++j) {
            if (j > i) {
                auto more = normalize_span(g.nodes[ids[j]].text);
                acc.insert(acc.end(), more.begin(), more.end());
            }
            if (acc.size() >= target.size()) {
                std::pair<int, int> r{ids[i], ids[j]};
                if (acc == target && !taken_range(taken, r)) return r;
                break;
            }
        }
    }
    return std::nullopt;
}

PrefixExpr span_prefix(const std::vector<std::pair<int, int>>& ranges, bool count) {
    PrefixExpr out;
    if (count) out.push_back(Token::make_op(Op::Count));
    std::size_t joins = count ? ranges.size() - 2 : ranges.size() - 1;
    for (std::size_t i = 0; i < joins; ++i) out.push_back(Token::make_op(Op::Add));
    for (const auto& [a, b] : ranges) {
        out.push_back(Token::make_op(Op::Mul));
        out.push_back(Token::node(a));
        out.push_back(Token::node(b));
    }
    return out;
}

std::string trim(const std::string& s) {
    auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split_count(const std::string& derivation) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        auto next = derivation.find("##", pos);
        out.push_back(trim(derivation.substr(pos, next == std::string::npos ? std::string::npos : next - pos)));
        if (next == std::string::npos) break;
        pos = next + 2;
    }
    out.erase(std::remove(out.begin(), out.end(), std::string{}), out.end());
    return out;
}

std::optional<GoldTarget> fail(std::string* reason, std::string why) {
    if (reason) *reason = std::move(why);
    return std::nullopt;
}

std::vector<double> row_values(const ad::Var& v) { return v.value().data; }

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::size_t op_class_of(AnswerType t, bool arithmetic, std::size_t op_classes) {
    if (op_classes == 2) return arithmetic ? kOpArithmetic : kOpSpan;
    if (arithmetic) return 0;
    switch (t) {
    case AnswerType::Spans: return 2;
    case AnswerType::Count: return 3;
    default: return 1;
    }
}

TreeKind tree_kind_of(std::size_t op_class, std::size_t) {
    return op_class == kOpArithmetic ? TreeKind::Arithmetic : TreeKind::Span;
}

std::string op_class_name(std::size_t op_class, std::size_t op_classes) {
    if (op_classes == 2) return kOpNames2[std::min<std::size_t>(op_class, 1)];
    return kOpNames4[std::min<std::size_t>(op_class, 3)];
}

std::optional<std::pair<int, int>> locate_span(const HeteroGraph& g, const std::string& span,
                                               const std::vector<std::pair<int, int>>& taken) {
    auto target = normalize_span(span);
    if (target.empty()) return std::nullopt;
    const std::string want = joined_norm(span);
    for (std::size_t k = 0; k < g.num_table; ++k) {
        int id = static_cast<int>(g.num_question + k);
        std::pair<int, int> r{id, id};
        if (joined_norm(g.nodes[id].text) == want && !taken_range(taken, r)) return r;
    }
    for (const auto& sentences : g.sentence_nodes) {
        for (int s : sentences) {
            std::vector<int> ids;
            for (std::size_t k = static_cast<std::size_t>(s) + 1;
                 k < g.size() && g.nodes[k].type == NodeType::PWord; ++k)
                ids.push_back(static_cast<int>(k));
            if (auto r = match_words(g, ids, target, taken)) return r;
        }
    }
    std::vector<int> q(g.num_question);
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = static_cast<int>(i);
    return match_words(g, q, target, taken);
}

std::optional<GoldTarget> bind_gold(const HybridExample& ex, const HeteroGraph& g, const NumberIndex& index,
                                    std::size_t op_classes, std::string* reason) {
    GoldTarget t;
    t.scale = ex.scale;
    if (ex.answer_type == AnswerType::Arithmetic) {
        std::optional<ExprTree> tree;
        try {
            tree = parse_infix(ex.derivation, index);
        } catch (const std::exception& e) {
            return fail(reason, std::string("derivation does not parse: ") + e.what());
        }
        if (tree->node(tree->root()).token.is_operator()) {
            t.kind = TreeKind::Arithmetic;
            t.op_class = op_class_of(ex.answer_type, true, op_classes);
            for (Token tok : to_prefix(*tree)) {
                if (tok.kind == Token::Kind::Number && !tok.entry) {
                    if (tok.value != 1.0) return fail(reason, "number " + format_number(tok.value) + " not found in the context");
                    tok = Token::constant_leaf(Constant::One);
                }
                t.tokens.push_back(tok);
            }
            return t;
        }
    }

    t.kind = TreeKind::Span;
    bool count = ex.answer_type == AnswerType::Count;
    t.op_class = op_class_of(ex.answer_type, false, op_classes);
    std::vector<std::string> spans;
    if (count) {
        spans = split_count(ex.derivation);
        const double* n = std::get_if<double>(&ex.answer);
        if (spans.size() < 2) return fail(reason, "count below two cannot be expressed");
        if (n && std::abs(*n - static_cast<double>(spans.size())) > 1e-9)
            return fail(reason, "count derivation disagrees with the answer");
    } else if (const double* v = std::get_if<double>(&ex.answer)) {
        spans.push_back(ex.derivation.empty() ? format_number(*v) : ex.derivation);
    } else {
        spans = std::get<std::vector<std::string>>(ex.answer);
    }
    if (spans.empty()) return fail(reason, "empty answer");
    for (const auto& s : spans) {
        auto r = locate_span(g, s, t.ranges);
        if (!r) {
            // Repeated gold spans collapse onto one range.
            if (!count && locate_span(g, s)) continue;
            return fail(reason, "span \"" + s + "\" not found in the context");
        }
        t.ranges.push_back(*r);
    }
    std::sort(t.ranges.begin(), t.ranges.end());
    if (count && t.ranges.size() < 2) return fail(reason, "count below two cannot be expressed");
    t.tokens = span_prefix(t.ranges, count);
    return t;
}

Prepared prepare(const HybridExample& ex, const ModelConfig& cfg) {
    Prepared p;
    p.example = ex;
    p.graph = build_graph(ex, cfg.graph_options());
    p.index = extract_numbers(ex);
    p.gold = bind_gold(ex, p.graph, p.index, cfg.op_classes, &p.skip_reason);
    return p;
}

std::vector<Prepared> prepare_all(const std::vector<HybridExample>& examples, const ModelConfig& cfg) {
    std::vector<Prepared> out;
    out.reserve(examples.size());
    for (const auto& ex : examples) out.push_back(prepare(ex, cfg));
    return out;
}

Heads::Heads(ParamStore& store, const ModelConfig& cfg) : cfg_(cfg) {
    const std::size_t d = cfg_.d;
    auto ffn = [&](const std::string& name, std::size_t in, std::size_t out) {
        Ffn f;
        Parameter* w1 = &store.add(name + ".W1", in, d);
        Parameter* b1 = &store.add(name + ".b1", 1, d);
        Parameter* w2 = &store.add(name + ".W2", d, out);
        Parameter* b2 = &store.add(name + ".b2", 1, out);
        matrices_.insert(matrices_.end(), {w1, w2});
        zeros_.insert(zeros_.end(), {b1, b2});
        f.w1 = w1;
        f.b1 = b1;
        f.w2 = w2;
        f.b2 = b2;
        return f;
    };
    op_ = ffn("head.op", 4 * d, cfg_.op_classes);
    scale_ = ffn("head.scale", d, kNumScales);
    if (cfg_.tag_spans) tag_ = ffn("head.tag", d, 1);
}

void Heads::init(std::mt19937_64& rng) {
    for (Parameter* p : matrices_)
        ParamStore::init_uniform(*p, 1.0 / std::sqrt(static_cast<double>(p->value.rows)), rng);
    for (Parameter* p : zeros_) p->value.fill(0.0);
}

ad::Var Heads::apply(ad::Tape& tape, const Ffn& f, ad::Var x) const {
    ad::Var h = ad::gelu(ad::linear(x, tape.param(*f.w1), tape.param(*f.b1)));
    return ad::linear(h, tape.param(*f.w2), tape.param(*f.b2));
}

ad::Var Heads::op_logits(ad::Tape& tape, const Encoding& enc) const {
    return apply(tape, op_, ad::concat_cols({enc.cls, enc.h_q, enc.h_t, enc.h_p}));
}

ad::Var Heads::scale_logits(ad::Tape& tape, const Encoding& enc) const { return apply(tape, scale_, enc.cls); }

ad::Var Heads::tag_logits(ad::Tape& tape, const Encoding& enc, std::size_t nodes) const {
    if (!tag_.w1) throw std::logic_error("span tagging head is disabled");
    return apply(tape, tag_, ad::slice_rows(enc.Z, 1, nodes));
}

ad::Var cross_entropy(ad::Var logits, std::size_t target) {
    const Tensor& x = logits.value();
    if (x.rows != 1 || target >= x.cols) throw std::invalid_argument("cross_entropy: bad target");
    double m = *std::max_element(x.data.begin(), x.data.end());
    double z = 0.0;
    for (double v : x.data) z += std::exp(v - m);
    double lse = m + std::log(z);
    std::vector<double> p(x.cols);
    for (std::size_t i = 0; i < x.cols; ++i) p[i] = std::exp(x.data[i] - lse);
    int in = logits.id;
    return logits.tape->record(Tensor(1, 1, lse - x.data[target]), [in, p, target](ad::Tape& t, int self) {
        double g = t.grad(self).data[0];
        Tensor& gi = t.grad(in);
        for (std::size_t i = 0; i < p.size(); ++i) gi.data[i] += g * (p[i] - (i == target ? 1.0 : 0.0));
    });
}

ad::Var binary_cross_entropy(ad::Var logits, const std::vector<double>& labels) {
    const Tensor& x = logits.value();
    if (x.cols != 1 || x.rows != labels.size() || labels.empty())
        throw std::invalid_argument("binary_cross_entropy: shape mismatch");
    const double n = static_cast<double>(labels.size());
    double loss = 0.0;
    std::vector<double> dx(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double v = x.data[i];
        // log(1 + e^v) - y v
        loss += std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))) - labels[i] * v;
        dx[i] = (1.0 / (1.0 + std::exp(-v)) - labels[i]) / n;
    }
    int in = logits.id;
    return logits.tape->record(Tensor(1, 1, loss / n), [in, dx](ad::Tape& t, int self) {
        double g = t.grad(self).data[0];
        Tensor& gi = t.grad(in);
        for (std::size_t i = 0; i < dx.size(); ++i) gi.data[i] += g * dx[i];
    });
}

Model::Model(const ModelConfig& cfg)
    : cfg_(cfg), encoder_(store_, cfg_), decoder_(store_, cfg_), heads_(store_, cfg_) {}

void Model::init() {
    std::mt19937_64 rng(cfg_.init_seed);
    encoder_.init(rng);
    decoder_.init(rng);
    heads_.init(rng);
}

LossParts Model::loss(ad::Tape& tape, const Prepared& p) const {
    if (!p.gold) throw std::invalid_argument("question " + p.example.question_id + " has no bound target");
    const GoldTarget& gold = *p.gold;
    Encoding enc = encoder_.encode(tape, p.graph);
    LossParts parts;
    parts.op = cross_entropy(heads_.op_logits(tape, enc), gold.op_class);
    parts.scale = cross_entropy(heads_.scale_logits(tape, enc), static_cast<std::size_t>(gold.scale));
    if (cfg_.tag_spans && gold.kind == TreeKind::Span) {
        std::vector<double> labels(p.graph.size(), 0.0);
        for (const auto& [a, b] : gold.ranges)
            for (int k = a; k <= b; ++k) labels[k] = 1.0;
        parts.tree = binary_cross_entropy(heads_.tag_logits(tape, enc, p.graph.size()), labels);
    } else {
        DecoderContext ctx = decoder_.context(tape, enc, p.graph, p.index, gold.kind);
        parts.tree = decoder_.teacher_forced_loss(tape, ctx, gold.tokens);
    }
    parts.total = ad::add(ad::add(parts.tree, parts.op), parts.scale);
    return parts;
}

Prediction Model::predict(const Prepared& p, std::size_t width, bool with_greedy) const {
    ad::Tape tape;
    Encoding enc = encoder_.encode(tape, p.graph);
    Prediction out;
    out.op_probs = row_values(ad::softmax_rows(heads_.op_logits(tape, enc)));
    out.scale_probs = row_values(ad::softmax_rows(heads_.scale_logits(tape, enc)));
    std::size_t op = argmax(out.op_probs);
    TreeKind kind = tree_kind_of(op, cfg_.op_classes);
    PredictionRecord& rec = out.record;
    rec.question_id = p.example.question_id;
    rec.op_class = op_class_name(op, cfg_.op_classes);
    rec.scale = static_cast<Scale>(argmax(out.scale_probs));
    rec.answer = std::vector<std::string>{};

    if (cfg_.tag_spans && kind == TreeKind::Span) {
        auto probs = row_values(ad::sigmoid(heads_.tag_logits(tape, enc, p.graph.size())));
        auto ranges = tagged_ranges(p.graph, probs);
        out.tagged = ranges;
        if (cfg_.op_classes == 4 && op == 3) {
            rec.answer = static_cast<double>(ranges.size());
        } else {
            rec.answer = range_texts(p.graph, ranges);
        }
        return out;
    }

    DecoderContext ctx = decoder_.context(tape, enc, p.graph, p.index, kind);
    try {
        out.beam = decoder_.decode(tape, ctx, width);
        if (with_greedy && width > 1) out.greedy = decoder_.decode(tape, ctx, 1);
        if (with_greedy && width == 1) out.greedy = out.beam;
    } catch (const DecodeError& e) {
        out.error = e.what();
        return out;
    }
    rec.prefix_tokens = prefix_to_strings(out.beam->tokens, kind);
    try {
        ExprTree tree = from_prefix(out.beam->tokens, kind);
        if (kind == TreeKind::Arithmetic) {
            double v = eval_arith(tree);
            if (std::isfinite(v)) {
                rec.answer = v;
            } else {
                out.error = "non-finite arithmetic result";
            }
        } else {
            SpanResult r = eval_span(tree, p.graph);
            if (const int* n = std::get_if<int>(&r)) {
                rec.answer = static_cast<double>(*n);
            } else {
                rec.answer = std::get<std::vector<std::string>>(r);
            }
        }
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

void Model::save(const std::filesystem::path& path) const { store_.save(path, to_json(cfg_)); }

std::unique_ptr<Model> Model::load(const std::filesystem::path& path) {
    auto manifest = path;
    manifest += ".json";
    std::ifstream in(manifest);
    if (!in) throw std::runtime_error("missing checkpoint manifest " + manifest.string());
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("config")) throw std::runtime_error("invalid checkpoint manifest " + manifest.string());
    auto model = std::make_unique<Model>(model_config_from_json(j.at("config")));
    model->store_.load(path);
    return model;
}

GradCheckReport grad_check_model(Model& model, const std::vector<Prepared>& data, const GradCheckOptions& opts) {
    return grad_check(model.params(), [&](Gradients* g) {
        double total = 0.0;
        for (const auto& p : data) {
            if (!p.gold) continue;
            ad::Tape tape;
            LossParts parts = model.loss(tape, p);
            if (g) tape.backward(parts.total, *g);
            total += parts.total.scalar();
        }
        return total;
    }, opts);
}

std::vector<std::pair<int, int>> tagged_ranges(const HeteroGraph& g, const std::vector<double>& probs) {
    std::vector<std::pair<int, int>> out;
    auto same_unit = [&](int a, int b) {
        const GraphNode& x = g.nodes[a];
        const GraphNode& y = g.nodes[b];
        if (x.source != y.source) return false;
        if (x.source == SourceType::Table) return false;
        if (x.source == SourceType::Paragraph)
            return x.type == NodeType::PWord && y.type == NodeType::PWord && x.paragraph == y.paragraph &&
                   x.sentence == y.sentence;
        return true;
    };
    for (std::size_t i = 0; i < probs.size() && i < g.size(); ++i) {
        if (probs[i] <= 0.5 || g.nodes[i].type == NodeType::PSentence) continue;
        int id = static_cast<int>(i);
        if (!out.empty() && out.back().second == id - 1 && same_unit(id - 1, id)) {
            out.back().second = id;
        } else {
            out.emplace_back(id, id);
        }
    }
    return out;
}

std::vector<std::string> range_texts(const HeteroGraph& g, const std::vector<std::pair<int, int>>& ranges) {
    std::vector<std::string> out;
    for (const auto& [a, b] : ranges) {
        std::string text;
        for (int k = a; k <= b; ++k) {
            if (g.nodes[k].text.empty()) continue;
            if (!text.empty()) text += ' ';
            text += g.nodes[k].text;
        }
        out.push_back(text);
    }
    return out;
}

}  // namespace reghnt
