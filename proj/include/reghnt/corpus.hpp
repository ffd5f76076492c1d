#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace reghnt {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

class SchemaError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Scale { None, Thousand, Million, Billion, Percent };
inline constexpr int kNumScales = 5;

enum class AnswerType { Span, Spans, Count, Arithmetic };
inline constexpr int kNumAnswerTypes = 4;

enum class AnswerFrom { Table, Text, TableText };
inline constexpr int kNumAnswerFroms = 3;

std::string_view to_string(Scale s);
std::string_view to_string(AnswerType t);
std::string_view to_string(AnswerFrom f);
// Accept the TAT-QA spellings ("", "thousand", "multi-span", "table-text", ...).
Scale parse_scale(std::string_view s);
AnswerType parse_answer_type(std::string_view s);
AnswerFrom parse_answer_from(std::string_view s);
double scale_factor(Scale s);

// A gold or predicted answer: a single number or a list of string spans.
using Answer = std::variant<double, std::vector<std::string>>;

struct Paragraph {
    int order = 0;
    std::string text;
    bool operator==(const Paragraph&) const = default;
};

struct HybridExample {
    std::string question_id;
    std::string context_id;
    std::string question_text;
    std::vector<std::string> question;  // tokenized words
    std::vector<std::vector<std::string>> table;
    std::vector<Paragraph> paragraphs;
    Answer answer = std::vector<std::string>{};
    std::string derivation;
    AnswerType answer_type = AnswerType::Span;
    AnswerFrom answer_from = AnswerFrom::Table;
    Scale scale = Scale::None;

    bool operator==(const HybridExample&) const = default;

    std::size_t rows() const { return table.size(); }
    std::size_t cols() const { return table.empty() ? 0 : table.front().size(); }
};

// Throws SchemaError naming the broken invariant.
void validate(const HybridExample& ex);

// Whitespace + punctuation tokenization. Number-like chunks ("1,027", "(53.0)",
// "$5.2", "12%") stay a single word; pure punctuation is dropped.
std::vector<std::string> tokenize_words(std::string_view text);
// Sentence boundaries are '.', '!' or '?' followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);
// Pseudo-subword pieces: numbers are never split; other words longer than six
// characters are cut into three-character pieces.
std::vector<std::string> subword_pieces(std::string_view word);
std::string lowercase(std::string_view s);

std::optional<double> normalize_number(std::string_view text);

// Tokenized view of a paragraph used by graph construction and number indexing.
struct SentenceWords {
    std::vector<std::string> words;
};
std::vector<SentenceWords> paragraph_sentences(const Paragraph& p);

enum class NumberSource { TableCell, ParagraphWord };

struct NumberLocation {
    NumberSource source = NumberSource::TableCell;
    // TableCell: (row, col). ParagraphWord: paragraph index, sentence index,
    // word index within the sentence.
    std::size_t row = 0, col = 0;
    std::size_t paragraph = 0, sentence = 0, word = 0;
    bool operator==(const NumberLocation&) const = default;
};

struct NumberEntry {
    double value = 0.0;
    std::string text;
    NumberLocation location;
    bool operator==(const NumberEntry&) const = default;
};

struct NumberIndex {
    std::vector<NumberEntry> entries;
    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
    // First entry whose value equals `value` within relative `rel_tol`.
    std::optional<std::size_t> find(double value, double rel_tol = 1e-6) const;
    bool operator==(const NumberIndex&) const = default;
};

NumberIndex extract_numbers(const HybridExample& ex);

struct LoadOptions {
    // Unlabeled files (e.g. a test split without answers) may omit the answer block.
    bool require_gold = true;
};

std::vector<HybridExample> parse_dataset(std::string_view json_text, const LoadOptions& opts = {});
std::vector<HybridExample> load_dataset(const std::filesystem::path& path, const LoadOptions& opts = {});

// Canonical one-example-per-line format.
nlohmann::json to_json(const HybridExample& ex);
HybridExample example_from_json(const nlohmann::json& j);
nlohmann::json answer_to_json(const Answer& a);
Answer answer_from_json(const nlohmann::json& j);
std::string to_jsonl(const std::vector<HybridExample>& examples);
std::vector<HybridExample> parse_jsonl(std::string_view text);

struct SplitStats {
    std::size_t contexts = 0;
    std::size_t questions = 0;
    // [answer_type][answer_from]
    std::size_t grid[kNumAnswerTypes][kNumAnswerFroms] = {};
};
SplitStats split_stats(const std::vector<HybridExample>& examples);

}  // namespace reghnt
