#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reghnt/corpus.hpp"

namespace reghnt {

class StructureError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class NodeType { QWord, TRow, TColumn, TCell, TTime, PWord, PSentence };
inline constexpr int kNumNodeTypes = 7;

// Where a node's text came from; selects the node-level pooling parameters.
enum class SourceType { Question, Table, Paragraph };
inline constexpr int kNumSourceTypes = 3;

enum class Relation { Contain, DistancePlus1, SameRow, SameColumn, PartialMatch, ExactMatch, Same, Self };
inline constexpr int kNumBaseRelations = 7;  // excluding Self
// Each base relation in both directions, plus the self-loop.
inline constexpr int kNumRelationIds = 2 * kNumBaseRelations + 1;

std::string_view to_string(NodeType t);
std::string_view to_string(Relation r);

struct GraphNode {
    int id = 0;
    NodeType type = NodeType::QWord;
    SourceType source = SourceType::Question;
    std::string text;
    std::vector<std::string> words;
    // Question: word = position. Table: (row, col). Paragraph: (paragraph, sentence, word);
    // word == -1 marks the sentence token.
    int row = -1, col = -1;
    int paragraph = -1, sentence = -1, word = -1;
};

struct Edge {
    int src = 0;
    int dst = 0;
    Relation rel = Relation::Self;
    bool reverse = false;

    int relation_id() const {
        return rel == Relation::Self ? 2 * kNumBaseRelations : 2 * static_cast<int>(rel) + (reverse ? 1 : 0);
    }
    bool operator==(const Edge&) const = default;
};

struct GraphOptions {
    bool intra = true;
    bool inter = true;
    // Question/paragraph match and CONTAIN edges also reach column headers
    // (and time headers) in addition to row headers.
    bool match_column_headers = true;
};

struct HeteroGraph {
    std::vector<GraphNode> nodes;
    std::vector<Edge> edges;
    std::size_t num_question = 0;
    std::size_t num_table = 0;
    std::size_t num_cols = 0;

    std::size_t size() const { return nodes.size(); }
    // Graph node holding a NumberIndex entry's value.
    int node_of(const NumberLocation& loc) const;
    int cell_node(std::size_t row, std::size_t col) const;

    std::vector<int> paragraph_offsets;  // first node id of each paragraph's sentences
    std::vector<std::vector<int>> sentence_nodes;  // per paragraph: node id of each sentence token
};

enum class SpanMatch { None, Partial, Exact };

// Case-insensitive comparison of a question/sentence against a header.
SpanMatch match_span(const std::vector<std::string>& unit_words, std::string_view header_text);

bool is_time_header(std::string_view text);

std::vector<GraphNode> classify_nodes(const HybridExample& ex);
HeteroGraph build_graph(const HybridExample& ex, const GraphOptions& opts = {});

// Type-pair legality of a single edge against the relation checklist.
bool edge_is_legal(const HeteroGraph& g, const Edge& e, const GraphOptions& opts = {});

nlohmann::json graph_to_json(const HeteroGraph& g);

}  // namespace reghnt
