#include "reghnt/graph.hpp"

#include <algorithm>
#include <set>
#include <tuple>
#include <unordered_set>

namespace reghnt {

std::string_view to_string(NodeType t) {
    switch (t) {
    case NodeType::QWord: return "Q_word";
    case NodeType::TRow: return "T_row";
    case NodeType::TColumn: return "T_column";
    case NodeType::TCell: return "T_cell";
    case NodeType::TTime: return "T_time";
    case NodeType::PWord: return "P_word";
    case NodeType::PSentence: return "P_sentence";
    }
    return "?";
}

std::string_view to_string(Relation r) {
    switch (r) {
    case Relation::Contain: return "CONTAIN";
    case Relation::DistancePlus1: return "DISTANCE+1";
    case Relation::SameRow: return "SAME_ROW";
    case Relation::SameColumn: return "SAME_COLUMN";
    case Relation::PartialMatch: return "PARTIALMATCH";
    case Relation::ExactMatch: return "EXACTMATCH";
    case Relation::Same: return "SAME";
    case Relation::Self: return "SELF";
    }
    return "?";
}

int HeteroGraph::cell_node(std::size_t row, std::size_t col) const {
    return static_cast<int>(num_question + row * num_cols + col);
}

int HeteroGraph::node_of(const NumberLocation& loc) const {
    if (loc.source == NumberSource::TableCell) return cell_node(loc.row, loc.col);
    int sent_node = sentence_nodes.at(loc.paragraph).at(loc.sentence);
    return sent_node + 1 + static_cast<int>(loc.word);
}

bool is_time_header(std::string_view text) {
    for (const auto& w : tokenize_words(text)) {
        if (w.size() != 4 || !std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
        int year = std::stoi(w);
        if (year >= 1900 && year <= 2099) return true;
    }
    return false;
}

namespace {

std::vector<std::string> lower_words(const std::vector<std::string>& words) {
    std::vector<std::string> out;
    out.reserve(words.size());
    for (const auto& w : words) out.push_back(lowercase(w));
    return out;
}

bool contains_span(const std::vector<std::string>& unit, const std::vector<std::string>& span) {
    if (span.empty() || span.size() > unit.size()) return false;
    return std::search(unit.begin(), unit.end(), span.begin(), span.end()) != unit.end();
}

bool is_header(const GraphNode& n) { return n.row == 0 || n.col == 0; }

}  // namespace

SpanMatch match_span(const std::vector<std::string>& unit_words, std::string_view header_text) {
    auto header = lower_words(tokenize_words(header_text));
    if (header.empty()) return SpanMatch::None;
    auto unit = lower_words(unit_words);
    if (contains_span(unit, header)) return SpanMatch::Exact;
    for (const auto& w : unit) {
        if (std::find(header.begin(), header.end(), w) != header.end()) return SpanMatch::Partial;
    }
    return SpanMatch::None;
}

std::vector<GraphNode> classify_nodes(const HybridExample& ex) {
    if (ex.table.empty() || ex.table.front().empty()) {
        throw StructureError("empty table in question " + ex.question_id);
    }
    std::vector<GraphNode> nodes;
    auto push = [&](GraphNode n) {
        n.id = static_cast<int>(nodes.size());
        nodes.push_back(std::move(n));
    };

    for (std::size_t i = 0; i < ex.question.size(); ++i) {
        GraphNode n;
        n.type = NodeType::QWord;
        n.source = SourceType::Question;
        n.text = ex.question[i];
        n.words = {ex.question[i]};
        n.word = static_cast<int>(i);
        push(std::move(n));
    }

    for (std::size_t r = 0; r < ex.table.size(); ++r) {
        for (std::size_t c = 0; c < ex.table[r].size(); ++c) {
            GraphNode n;
            n.source = SourceType::Table;
            n.text = ex.table[r][c];
            n.words = tokenize_words(n.text);
            n.row = static_cast<int>(r);
            n.col = static_cast<int>(c);
            if (r == 0 && c == 0) {
                n.type = NodeType::TColumn;
            } else if (r == 0 || c == 0) {
                if (is_time_header(n.text)) {
                    n.type = NodeType::TTime;
                } else {
                    n.type = r == 0 ? NodeType::TColumn : NodeType::TRow;
                }
            } else {
                n.type = NodeType::TCell;
            }
            push(std::move(n));
        }
    }

    for (std::size_t p = 0; p < ex.paragraphs.size(); ++p) {
        auto sentences = paragraph_sentences(ex.paragraphs[p]);
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            GraphNode sent;
            sent.type = NodeType::PSentence;
            sent.source = SourceType::Paragraph;
            sent.paragraph = static_cast<int>(p);
            sent.sentence = static_cast<int>(s);
            push(std::move(sent));
            for (std::size_t w = 0; w < sentences[s].words.size(); ++w) {
                GraphNode n;
                n.type = NodeType::PWord;
                n.source = SourceType::Paragraph;
                n.text = sentences[s].words[w];
                n.words = {n.text};
                n.paragraph = static_cast<int>(p);
                n.sentence = static_cast<int>(s);
                n.word = static_cast<int>(w);
                push(std::move(n));
            }
        }
    }
    return nodes;
}

namespace {

class EdgeSink {
public:
    explicit EdgeSink(std::vector<Edge>& edges) : edges_(edges) {}

    // Adds the forward edge and its reverse-flagged twin.
    void pair(int src, int dst, Relation rel) {
        add({src, dst, rel, false});
        add({dst, src, rel, true});
    }
    void self(int id) { add({id, id, Relation::Self, false}); }

private:
    void add(const Edge& e) {
        if (seen_.insert({e.src, e.dst, e.relation_id()}).second) edges_.push_back(e);
    }
    std::vector<Edge>& edges_;
    std::set<std::tuple<int, int, int>> seen_;
};

bool match_target(const GraphNode& n, const GraphOptions& opts) {
    if (n.source != SourceType::Table || !is_header(n)) return false;
    if (n.type == NodeType::TRow) return true;
    return opts.match_column_headers && (n.type == NodeType::TColumn || n.type == NodeType::TTime);
}

// Word -> header PARTIALMATCH / EXACTMATCH edges for one unit (question or sentence).
void link_unit_to_headers(EdgeSink& sink, const std::vector<int>& unit_ids, const std::vector<std::string>& unit_words,
                          const std::vector<int>& headers, const std::vector<GraphNode>& nodes) {
    auto unit_lower = lower_words(unit_words);
    for (int h : headers) {
        SpanMatch m = match_span(unit_words, nodes[h].text);
        if (m == SpanMatch::None) continue;
        auto header_words = lower_words(nodes[h].words);
        Relation rel = m == SpanMatch::Exact ? Relation::ExactMatch : Relation::PartialMatch;
        for (std::size_t i = 0; i < unit_ids.size(); ++i) {
            if (std::find(header_words.begin(), header_words.end(), unit_lower[i]) != header_words.end()) {
                sink.pair(unit_ids[i], h, rel);
            }
        }
    }
}

}  // namespace

HeteroGraph build_graph(const HybridExample& ex, const GraphOptions& opts) {
    HeteroGraph g;
    g.nodes = classify_nodes(ex);
    g.num_question = ex.question.size();
    g.num_table = ex.rows() * ex.cols();
    g.num_cols = ex.cols();
    const std::size_t rows = ex.rows(), cols = ex.cols();
    auto cell = [&](std::size_t r, std::size_t c) { return static_cast<int>(g.num_question + r * cols + c); };

    // Sentence bookkeeping.
    g.sentence_nodes.assign(ex.paragraphs.size(), {});
    g.paragraph_offsets.assign(ex.paragraphs.size(), -1);
    struct Sentence {
        int token;
        std::vector<int> word_ids;
        std::vector<std::string> words;
    };
    std::vector<Sentence> sentences;
    for (const auto& n : g.nodes) {
        if (n.type == NodeType::PSentence) {
            g.sentence_nodes[n.paragraph].push_back(n.id);
            if (g.paragraph_offsets[n.paragraph] < 0) g.paragraph_offsets[n.paragraph] = n.id;
            sentences.push_back({n.id, {}, {}});
        } else if (n.type == NodeType::PWord) {
            sentences.back().word_ids.push_back(n.id);
            sentences.back().words.push_back(n.text);
        }
    }

    std::vector<int> question_ids(g.num_question);
    for (std::size_t i = 0; i < g.num_question; ++i) question_ids[i] = static_cast<int>(i);

    EdgeSink sink(g.edges);

    if (opts.intra) {
        // Header CONTAIN body cell.
        for (std::size_t r = 1; r < rows; ++r) {
            for (std::size_t c = 1; c < cols; ++c) {
                sink.pair(cell(r, 0), cell(r, c), Relation::Contain);
                sink.pair(cell(0, c), cell(r, c), Relation::Contain);
            }
        }
        for (const auto& s : sentences) {
            for (int w : s.word_ids) sink.pair(s.token, w, Relation::Contain);
            for (std::size_t i = 1; i < s.word_ids.size(); ++i) {
                sink.pair(s.word_ids[i - 1], s.word_ids[i], Relation::DistancePlus1);
            }
        }
        for (std::size_t i = 1; i < g.num_question; ++i) {
            sink.pair(static_cast<int>(i - 1), static_cast<int>(i), Relation::DistancePlus1);
        }
        for (std::size_t r = 1; r < rows; ++r) {
            for (std::size_t a = 1; a < cols; ++a) {
                for (std::size_t b = a + 1; b < cols; ++b) sink.pair(cell(r, a), cell(r, b), Relation::SameRow);
            }
        }
        for (std::size_t c = 1; c < cols; ++c) {
            for (std::size_t a = 1; a < rows; ++a) {
                for (std::size_t b = a + 1; b < rows; ++b) sink.pair(cell(a, c), cell(b, c), Relation::SameColumn);
            }
        }
    }

    if (opts.inter) {
        std::vector<int> headers;
        for (std::size_t i = g.num_question; i < g.num_question + g.num_table; ++i) {
            if (match_target(g.nodes[i], opts) && !g.nodes[i].words.empty()) headers.push_back(static_cast<int>(i));
        }
        link_unit_to_headers(sink, question_ids, ex.question, headers, g.nodes);

        auto question_lower = lower_words(ex.question);
        for (const auto& s : sentences) {
            auto sent_lower = lower_words(s.words);
            for (std::size_t q = 0; q < g.num_question; ++q) {
                if (std::find(sent_lower.begin(), sent_lower.end(), question_lower[q]) != sent_lower.end()) {
                    sink.pair(s.token, static_cast<int>(q), Relation::Contain);
                }
            }
            for (int h : headers) {
                if (contains_span(sent_lower, lower_words(g.nodes[h].words))) sink.pair(s.token, h, Relation::Contain);
            }
            link_unit_to_headers(sink, s.word_ids, s.words, headers, g.nodes);
            for (std::size_t i = 0; i < s.word_ids.size(); ++i) {
                for (std::size_t q = 0; q < g.num_question; ++q) {
                    if (sent_lower[i] == question_lower[q]) sink.pair(s.word_ids[i], static_cast<int>(q), Relation::Same);
                }
            }
        }
    }

    for (const auto& n : g.nodes) sink.self(n.id);
    return g;
}

bool edge_is_legal(const HeteroGraph& g, const Edge& e, const GraphOptions& opts) {
    const int n = static_cast<int>(g.size());
    if (e.src < 0 || e.dst < 0 || e.src >= n || e.dst >= n) return false;
    if (e.rel == Relation::Self) return e.src == e.dst && !e.reverse;
    if (e.src == e.dst) return false;
    // Checklist rows are stated in the forward direction.
    const GraphNode& x = g.nodes[e.reverse ? e.dst : e.src];
    const GraphNode& y = g.nodes[e.reverse ? e.src : e.dst];
    auto is = [](const GraphNode& node, NodeType t) { return node.type == t; };
    auto header_target = [&](const GraphNode& node) { return match_target(node, opts); };
    switch (e.rel) {
    case Relation::Contain:
        if (is(y, NodeType::TCell)) {
            bool row_head = x.col == 0 && x.row == y.row && (is(x, NodeType::TRow) || is(x, NodeType::TTime));
            bool col_head = x.row == 0 && x.col == y.col && (is(x, NodeType::TColumn) || is(x, NodeType::TTime));
            return row_head || col_head;
        }
        if (!is(x, NodeType::PSentence)) return false;
        if (is(y, NodeType::PWord)) return y.paragraph == x.paragraph && y.sentence == x.sentence;
        return is(y, NodeType::QWord) || header_target(y);
    case Relation::DistancePlus1:
        if (is(x, NodeType::QWord) && is(y, NodeType::QWord)) return y.word == x.word + 1;
        return is(x, NodeType::PWord) && is(y, NodeType::PWord) && x.paragraph == y.paragraph &&
               x.sentence == y.sentence && y.word == x.word + 1;
    case Relation::SameRow:
        return is(x, NodeType::TCell) && is(y, NodeType::TCell) && x.row == y.row;
    case Relation::SameColumn:
        return is(x, NodeType::TCell) && is(y, NodeType::TCell) && x.col == y.col;
    case Relation::PartialMatch:
    case Relation::ExactMatch:
        return (is(x, NodeType::QWord) || is(x, NodeType::PWord)) && header_target(y);
    case Relation::Same:
        return is(x, NodeType::PWord) && is(y, NodeType::QWord);
    case Relation::Self:
        break;
    }
    return false;
}

nlohmann::json graph_to_json(const HeteroGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) nodes.push_back({{"id", n.id}, {"type", to_string(n.type)}, {"text", n.text}});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges) {
        edges.push_back({{"src", e.src}, {"dst", e.dst}, {"rel", to_string(e.rel)}, {"reverse", e.reverse}});
    }
    return {{"nodes", nodes}, {"edges", edges}};
}

}  // namespace reghnt
