#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "reghnt/corpus.hpp"

using namespace reghnt;

namespace {

HybridExample load_stock_options(std::size_t q = 0) {
    return load_dataset(std::string(REGHNT_TEST_DATA) + "/stock_options.json").at(q);
}

}  // namespace

TEST_CASE("normalize_number handles financial formats") {
    CHECK(*normalize_number("1,027") == doctest::Approx(1027));
    CHECK(*normalize_number("(53.0)") == doctest::Approx(-53.0));
    CHECK_FALSE(normalize_number("compensation"));
    // Hand table of formats seen in annual reports.
    struct Case {
        const char* text;
        std::optional<double> value;
    };
    const Case table[] = {
        {"$109.7", 109.7},  {"$ 1,027", 1027},  {"12%", 12},       {" 2019 ", 2019},  {"(1,234.5)", -1234.5},
        {"-5", -5},         {"$(3.2)", std::nullopt}, {"($3.2)", -3.2}, {"\xE2\x88\x92" "4", -4}, {"", std::nullopt},
        {"-", std::nullopt}, {"1.2.3", std::nullopt}, {"5.", std::nullopt}, {"1,027,", std::nullopt}, {".5", 0.5},
        {"\xE2\x82\xAC" "12", 12}, {"N/A", std::nullopt}, {"2019a", std::nullopt},
    };
    for (const auto& c : table) {
        CAPTURE(c.text);
        auto v = normalize_number(c.text);
        REQUIRE(v.has_value() == c.value.has_value());
        if (v) CHECK(*v == doctest::Approx(*c.value));
    }
}

TEST_CASE("tokenizer keeps numbers whole and drops punctuation") {
    auto w = tokenize_words("Revenue was $1,027 (up 12%) in 2019.");
    std::vector<std::string> expected{"Revenue", "was", "$1,027", "up", "12%", "in", "2019"};
    CHECK(w == expected);
    CHECK(tokenize_words("loss of (53.0).") == std::vector<std::string>{"loss", "of", "(53.0)"});
    CHECK(tokenize_words("Black-Scholes") == std::vector<std::string>{"Black", "Scholes"});
    CHECK(tokenize_words("").empty());
}

TEST_CASE("pseudo-subwords split long words but never numbers") {
    CHECK(subword_pieces("compensation") == std::vector<std::string>{"com", "pen", "sat", "ion"});
    CHECK(subword_pieces("sales") == std::vector<std::string>{"sales"});
    CHECK(subword_pieces("1,027,000.5") == std::vector<std::string>{"1,027,000.5"});
}

TEST_CASE("sentence splitting ignores decimal points") {
    auto s = split_sentences("It was $109.7 million in 2019. Growth continued! Why?");
    REQUIRE(s.size() == 3);
    CHECK(s[0] == "It was $109.7 million in 2019.");
}

TEST_CASE("load_dataset: stock-option context") {
    auto all = load_dataset(std::string(REGHNT_TEST_DATA) + "/stock_options.json");
    REQUIRE(all.size() == 3);
    CHECK(all[0].answer_type == AnswerType::Arithmetic);
    CHECK(all[0].answer_from == AnswerFrom::TableText);
    CHECK(all[2].answer_type == AnswerType::Spans);
    CHECK(all[0].rows() == 4);
    CHECK(all[0].cols() == 3);
}

TEST_CASE("load_dataset: bundled 20-example sample validates") {
    auto all = load_dataset(std::string(REGHNT_SOURCE_DIR) + "/data/sample_tatqa.json");
    CHECK(all.size() == 20);
    for (const auto& ex : all) CHECK_NOTHROW(validate(ex));
    auto st = split_stats(all);
    CHECK(st.contexts == 5);
    CHECK(st.questions == 20);
}

TEST_CASE("load_dataset: empty array and errors") {
    CHECK(parse_dataset("[]").empty());
    try {
        parse_dataset("[{\"table\": ");
        FAIL("expected parse error");
    } catch (const ParseError& e) {
        CHECK(e.offset() > 0);
    }
    try {
        parse_dataset(R"([{"table": {"uid": "ctx-7", "table": [["a"]]}, "questions": []}])");
        FAIL("expected schema error");
    } catch (const SchemaError& e) {
        std::string msg = e.what();
        CHECK(msg.find("paragraphs") != std::string::npos);
        CHECK(msg.find("ctx-7") != std::string::npos);
    }
    // Ragged table violates the rectangular invariant.
    CHECK_THROWS_AS(parse_dataset(R"([{"table": {"uid": "r", "table": [["a","b"],["c"]]}, "paragraphs": [],
        "questions": [{"uid":"q","question":"x","answer":["a"],"answer_type":"span","answer_from":"table"}]}])"),
                    SchemaError);
    // Arithmetic without derivation.
    CHECK_THROWS_AS(parse_dataset(R"([{"table": {"uid": "r", "table": [["a"]]}, "paragraphs": [],
        "questions": [{"uid":"q","question":"x","answer":1,"answer_type":"arithmetic","answer_from":"table"}]}])"),
                    SchemaError);
    // Unlabeled split loads when gold is not required.
    auto unlabeled = parse_dataset(R"([{"table": {"uid": "r", "table": [["a"]]}, "paragraphs": [],
        "questions": [{"uid":"q","question":"x"}]}])",
                                   LoadOptions{false});
    CHECK(unlabeled.size() == 1);
}

TEST_CASE("extract_numbers: stock-option values and locations") {
    auto ex = load_stock_options();
    auto idx = extract_numbers(ex);
    auto find = [&](double v) {
        for (const auto& e : idx.entries) {
            if (std::abs(e.value - v) < 1e-9) return &e;
        }
        return static_cast<const NumberEntry*>(nullptr);
    };
    const auto* a = find(0.41);
    const auto* b = find(278.29);
    const auto* c = find(109.7);
    REQUIRE(a);
    REQUIRE(b);
    REQUIRE(c);
    CHECK(a->location.source == NumberSource::TableCell);
    CHECK(a->location.row == 1);
    CHECK(a->location.col == 1);
    CHECK(b->location.source == NumberSource::TableCell);
    CHECK(c->location.source == NumberSource::ParagraphWord);
    CHECK(c->location.paragraph == 0);
    // Purity: repeated calls are identical.
    CHECK(extract_numbers(ex) == idx);
}

TEST_CASE("extract_numbers: text-only table and 3x3 integer grid") {
    HybridExample ex;
    ex.question_id = "t";
    ex.table = {{"alpha", "beta"}, {"gamma", "delta"}};
    CHECK(extract_numbers(ex).empty());

    ex.table = {{"11", "12", "13"}, {"21", "22", "23"}, {"31", "32", "33"}};
    auto idx = extract_numbers(ex);
    // Brute-force scan oracle: row-major order of every parseable cell.
    std::vector<double> oracle;
    for (const auto& row : ex.table) {
        for (const auto& cell : row) oracle.push_back(std::stod(cell));
    }
    REQUIRE(idx.size() == 9);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(idx.entries[i].value == oracle[i]);
        CHECK(idx.entries[i].location.row == i / 3);
        CHECK(idx.entries[i].location.col == i % 3);
    }
}

TEST_CASE("canonical JSONL round-trip is lossless") {
    auto all = load_dataset(std::string(REGHNT_SOURCE_DIR) + "/data/sample_tatqa.json");
    auto again = parse_jsonl(to_jsonl(all));
    REQUIRE(again.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(again[i] == all[i]);
    // Second pass is byte-identical.
    CHECK(to_jsonl(again) == to_jsonl(all));
}

TEST_CASE("number index lookup by value") {
    auto ex = load_stock_options();
    auto idx = extract_numbers(ex);
    auto hit = idx.find(278.29);
    REQUIRE(hit);
    CHECK(idx.entries[*hit].text == "278.29");
    CHECK_FALSE(idx.find(123456.0));
}
