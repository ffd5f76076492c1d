#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>
#include <tuple>

#include "random_examples.hpp"
#include "reghnt/graph.hpp"

using namespace reghnt;

namespace {

HybridExample stock_options() { return load_dataset(std::string(REGHNT_TEST_DATA) + "/stock_options.json").at(0); }

HybridExample with_table(std::vector<std::vector<std::string>> table, std::string question = "") {
    HybridExample ex;
    ex.question_id = "t";
    ex.table = std::move(table);
    ex.question_text = std::move(question);
    ex.question = tokenize_words(ex.question_text);
    return ex;
}

std::size_t count_edges(const HeteroGraph& g, Relation rel, bool reverse) {
    std::size_t n = 0;
    for (const auto& e : g.edges) n += (e.rel == rel && e.reverse == reverse);
    return n;
}

std::size_t expected_node_count(const HybridExample& ex) {
    std::size_t n = ex.question.size() + ex.rows() * ex.cols();
    for (const auto& p : ex.paragraphs) {
        for (const auto& s : paragraph_sentences(p)) n += 1 + s.words.size();
    }
    return n;
}

}  // namespace

TEST_CASE("classify_nodes: stock-option year header is T_time") {
    auto ex = stock_options();
    auto nodes = classify_nodes(ex);
    const std::size_t q = ex.question.size();
    CHECK(nodes[q + 1].text == "2019");
    CHECK(nodes[q + 1].type == NodeType::TTime);
    CHECK(nodes[q + 3].type == NodeType::TRow);  // "Expected volatility"
    CHECK(nodes[q + 4].type == NodeType::TCell);
}

TEST_CASE("classify_nodes: degenerate and header layouts") {
    auto one = classify_nodes(with_table({{"only"}}));
    REQUIRE(one.size() == 1);
    CHECK(one[0].type == NodeType::TColumn);

    auto nodes = classify_nodes(with_table({{"", "a", "b"}, {"r1", "1", "2"}, {"r2", "3", "4"}, {"r3", "5", "6"}}));
    std::map<NodeType, int> counts;
    for (const auto& n : nodes) ++counts[n.type];
    // Two column headers plus the corner, three row headers, six body cells.
    CHECK(counts[NodeType::TColumn] == 3);
    CHECK(counts[NodeType::TRow] == 3);
    CHECK(counts[NodeType::TCell] == 6);
    CHECK(nodes[0].type == NodeType::TColumn);

    HybridExample empty;
    CHECK_THROWS_AS(classify_nodes(empty), StructureError);
}

TEST_CASE("match_span cases") {
    auto q = tokenize_words("What is the percentage change in total net sales from 2018 to 2019?");
    CHECK(match_span(q, "total net sales") == SpanMatch::Exact);
    CHECK(match_span(q, "net sales growth") == SpanMatch::Partial);
    CHECK(match_span(q, "restructuring charges") == SpanMatch::None);
    CHECK(match_span(q, "Total Net Sales") == SpanMatch::Exact);
    CHECK(match_span(q, "") == SpanMatch::None);
}

TEST_CASE("build_graph: question chain has |Q|-1 DISTANCE+1 edges each way") {
    auto ex = with_table({{"x"}}, "one two three four five");
    auto g = build_graph(ex);
    CHECK(count_edges(g, Relation::DistancePlus1, false) == 4);
    CHECK(count_edges(g, Relation::DistancePlus1, true) == 4);
}

TEST_CASE("build_graph: SAME_ROW count matches pair enumeration") {
    for (int k = 1; k <= 6; ++k) {
        std::vector<std::vector<std::string>> table(2, std::vector<std::string>(k + 1));
        table[0][0] = "";
        table[1][0] = "row";
        for (int c = 1; c <= k; ++c) {
            table[0][c] = "h" + std::to_string(c);
            table[1][c] = std::to_string(c * 10);
        }
        auto g = build_graph(with_table(table));
        std::size_t oracle = 0;
        for (int a = 1; a <= k; ++a) {
            for (int b = 1; b <= k; ++b) oracle += (a < b);
        }
        CAPTURE(k);
        CHECK(count_edges(g, Relation::SameRow, false) == oracle);
        CHECK(oracle == static_cast<std::size_t>(k * (k - 1) / 2));
    }
}

TEST_CASE("build_graph: stock-option SAME edges follow string matching") {
    auto ex = stock_options();
    auto g = build_graph(ex);
    std::set<std::pair<int, int>> same;
    for (const auto& e : g.edges) {
        if (e.rel == Relation::Same && !e.reverse) same.insert({e.src, e.dst});
    }
    std::size_t checked = 0;
    for (const auto& n : g.nodes) {
        if (n.type != NodeType::PWord) continue;
        for (std::size_t q = 0; q < ex.question.size(); ++q) {
            bool match = lowercase(n.text) == lowercase(ex.question[q]);
            CHECK(same.count({n.id, static_cast<int>(q)}) == static_cast<std::size_t>(match));
            checked += match;
        }
    }
    // "compensation", "expense", "related", "to", "stock", "options", "2019", ...
    CHECK(checked >= 5);
    // The sentence holding 109.7 also mentions 2019, which is in the question.
    int sent_2019 = -1;
    for (const auto& n : g.nodes) {
        if (n.type == NodeType::PWord && n.text == "2019") sent_2019 = n.id;
    }
    REQUIRE(sent_2019 >= 0);
    CHECK(same.count({sent_2019, static_cast<int>(ex.question.size() - 1)}) == 1);
}

TEST_CASE("build_graph: inter edges link question words to headers") {
    auto ex = stock_options();
    auto g = build_graph(ex);
    const int header = g.cell_node(1, 0);  // "Expected volatility"
    bool exact = false;
    for (const auto& e : g.edges) {
        if (e.dst == header && e.rel == Relation::ExactMatch && !e.reverse) exact = true;
    }
    CHECK(exact);

    GraphOptions only_rows;
    only_rows.match_column_headers = false;
    auto g2 = build_graph(ex, only_rows);
    for (const auto& e : g2.edges) {
        if ((e.rel == Relation::ExactMatch || e.rel == Relation::PartialMatch)) {
            int h = e.reverse ? e.src : e.dst;
            CHECK(g2.nodes[h].type == NodeType::TRow);
        }
    }
}

TEST_CASE("build_graph: ablation toggles keep only self-loops") {
    auto ex = stock_options();
    GraphOptions none;
    none.intra = false;
    none.inter = false;
    auto g = build_graph(ex, none);
    CHECK(g.edges.size() == g.size());
    for (const auto& e : g.edges) CHECK(e.rel == Relation::Self);
}

TEST_CASE("property: graph invariants on random examples") {
    std::mt19937 rng(1234);
    for (int trial = 0; trial < 200; ++trial) {
        auto ex = testing::random_example(rng);
        auto g = build_graph(ex);
        CAPTURE(trial);
        REQUIRE(g.size() == expected_node_count(ex));

        std::set<std::tuple<int, int, int>> triples;
        std::set<std::tuple<int, int, int>> forward, reverse;
        std::size_t self_loops = 0;
        for (const auto& e : g.edges) {
            CHECK(edge_is_legal(g, e));
            CHECK(triples.insert({e.src, e.dst, e.relation_id()}).second);
            if (e.rel == Relation::Self) {
                ++self_loops;
            } else if (e.reverse) {
                reverse.insert({e.dst, e.src, static_cast<int>(e.rel)});
            } else {
                forward.insert({e.src, e.dst, static_cast<int>(e.rel)});
            }
        }
        CHECK(forward == reverse);
        CHECK(self_loops == g.size());

        auto again = build_graph(ex);
        CHECK(again.edges == g.edges);
    }
}
