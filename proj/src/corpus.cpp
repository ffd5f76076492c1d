#include "reghnt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace reghnt {

using nlohmann::json;

std::string_view to_string(Scale s) {
    switch (s) {
    case Scale::None: return "";
    case Scale::Thousand: return "thousand";
    case Scale::Million: return "million";
    case Scale::Billion: return "billion";
    case Scale::Percent: return "percent";
    }
    return "";
}

std::string_view to_string(AnswerType t) {
    switch (t) {
    case AnswerType::Span: return "span";
    case AnswerType::Spans: return "multi-span";
    case AnswerType::Count: return "count";
    case AnswerType::Arithmetic: return "arithmetic";
    }
    return "span";
}

std::string_view to_string(AnswerFrom f) {
    switch (f) {
    case AnswerFrom::Table: return "table";
    case AnswerFrom::Text: return "text";
    case AnswerFrom::TableText: return "table-text";
    }
    return "table";
}

Scale parse_scale(std::string_view s) {
    std::string l = lowercase(s);
    if (l.empty() || l == "none") return Scale::None;
    if (l == "thousand") return Scale::Thousand;
    if (l == "million") return Scale::Million;
    if (l == "billion") return Scale::Billion;
    if (l == "percent") return Scale::Percent;
    throw SchemaError("unknown scale '" + std::string(s) + "'");
}

AnswerType parse_answer_type(std::string_view s) {
    std::string l = lowercase(s);
    if (l == "span") return AnswerType::Span;
    if (l == "multi-span" || l == "spans") return AnswerType::Spans;
    if (l == "count") return AnswerType::Count;
    if (l == "arithmetic") return AnswerType::Arithmetic;
    throw SchemaError("unknown answer_type '" + std::string(s) + "'");
}

AnswerFrom parse_answer_from(std::string_view s) {
    std::string l = lowercase(s);
    if (l == "table") return AnswerFrom::Table;
    if (l == "text") return AnswerFrom::Text;
    if (l == "table-text" || l == "tabletext") return AnswerFrom::TableText;
    throw SchemaError("unknown answer_from '" + std::string(s) + "'");
}

double scale_factor(Scale s) {
    switch (s) {
    case Scale::None: return 1.0;
    case Scale::Thousand: return 1e3;
    case Scale::Million: return 1e6;
    case Scale::Billion: return 1e9;
    case Scale::Percent: return 1e-2;
    }
    return 1.0;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) {
    // Bytes >= 0x80 belong to UTF-8 sequences and are kept inside words.
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || static_cast<unsigned char>(c) >= 0x80;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
    return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

}  // namespace

std::optional<double> normalize_number(std::string_view text) {
    std::string_view s = trim(text);
    bool negative = false;
    if (s.size() >= 2 && s.front() == '(' && s.back() == ')') {
        negative = true;
        s = trim(s.substr(1, s.size() - 2));
    }
    // Unicode minus (U+2212) and ASCII hyphen.
    if (starts_with(s, "\xE2\x88\x92")) {
        negative = !negative;
        s.remove_prefix(3);
    } else if (starts_with(s, "-")) {
        negative = !negative;
        s.remove_prefix(1);
    }
    s = trim(s);
    static const std::string_view currencies[] = {"$", "\xE2\x82\xAC", "\xC2\xA3", "\xC2\xA5"};
    for (bool stripped = true; stripped;) {
        stripped = false;
        for (auto cur : currencies) {
            if (starts_with(s, cur)) {
                s.remove_prefix(cur.size());
                s = trim(s);
                stripped = true;
            }
        }
    }
    if (ends_with(s, "%")) s = trim(s.substr(0, s.size() - 1));
    // A sign may also follow the currency symbol ("$-5").
    if (starts_with(s, "-") && !negative) {
        negative = true;
        s.remove_prefix(1);
    }

    if (s.empty() || s.front() == ',' || s.back() == ',' || s.back() == '.') return std::nullopt;

    std::string digits;
    int dots = 0, n_digits = 0;
    for (char c : s) {
        if (c == ',') continue;
        if (c == '.') {
            ++dots;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            ++n_digits;
        } else {
            return std::nullopt;
        }
        digits.push_back(c);
    }
    if (n_digits == 0 || dots > 1) return std::nullopt;
    if (digits.front() == '.') digits.insert(digits.begin(), '0');

    double value = 0.0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || !std::isfinite(value)) {
        return std::nullopt;
    }
    return negative ? -value : value;
}

std::vector<std::string> tokenize_words(std::string_view text) {
    static constexpr std::string_view leading = "\"'([{";
    static constexpr std::string_view trailing = "\"')]}.,;:!?";
    std::vector<std::string> words;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        std::string_view chunk = text.substr(i, j - i);
        i = j;
        if (chunk.empty()) continue;

        // Peel wrapping punctuation until the core is a number or nothing peels.
        // Trailing marks go first so "(53.0)." keeps its accounting parentheses.
        while (!chunk.empty() && !normalize_number(chunk)) {
            if (trailing.find(chunk.back()) != std::string_view::npos) {
                chunk.remove_suffix(1);
            } else if (leading.find(chunk.front()) != std::string_view::npos) {
                chunk.remove_prefix(1);
            } else {
                break;
            }
        }
        if (chunk.empty()) continue;
        if (normalize_number(chunk)) {
            words.emplace_back(chunk);
            continue;
        }
        // Split the remaining core on punctuation; punctuation itself is dropped.
        std::size_t k = 0;
        while (k < chunk.size()) {
            while (k < chunk.size() && !is_alnum(chunk[k])) ++k;
            std::size_t m = k;
            while (m < chunk.size() && is_alnum(chunk[m])) ++m;
            if (m > k) words.emplace_back(chunk.substr(k, m - k));
            k = m;
        }
    }
    return words;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) {
            auto s = trim(text.substr(start, i + 1 - start));
            if (!s.empty()) out.emplace_back(s);
            start = i + 1;
        }
    }
    auto tail = trim(text.substr(std::min(start, text.size())));
    if (!tail.empty()) out.emplace_back(tail);
    return out;
}

std::vector<std::string> subword_pieces(std::string_view word) {
    if (word.size() <= 6 || normalize_number(word)) return {std::string(word)};
    std::vector<std::string> pieces;
    for (std::size_t i = 0; i < word.size(); i += 3) pieces.emplace_back(word.substr(i, 3));
    return pieces;
}

std::vector<SentenceWords> paragraph_sentences(const Paragraph& p) {
    std::vector<SentenceWords> out;
    for (const auto& s : split_sentences(p.text)) {
        SentenceWords sw{tokenize_words(s)};
        if (!sw.words.empty()) out.push_back(std::move(sw));
    }
    return out;
}

std::optional<std::size_t> NumberIndex::find(double value, double rel_tol) const {
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double v = entries[i].value;
        double scale = std::max({std::abs(v), std::abs(value), 1e-12});
        if (std::abs(v - value) <= rel_tol * scale) return i;
    }
    return std::nullopt;
}

NumberIndex extract_numbers(const HybridExample& ex) {
    NumberIndex index;
    for (std::size_t r = 0; r < ex.table.size(); ++r) {
        for (std::size_t c = 0; c < ex.table[r].size(); ++c) {
            if (auto v = normalize_number(ex.table[r][c])) {
                NumberEntry e;
                e.value = *v;
                e.text = std::string(trim(ex.table[r][c]));
                e.location.source = NumberSource::TableCell;
                e.location.row = r;
                e.location.col = c;
                index.entries.push_back(std::move(e));
            }
        }
    }
    for (std::size_t p = 0; p < ex.paragraphs.size(); ++p) {
        auto sentences = paragraph_sentences(ex.paragraphs[p]);
        for (std::size_t s = 0; s < sentences.size(); ++s) {
            const auto& words = sentences[s].words;
            for (std::size_t w = 0; w < words.size(); ++w) {
                if (auto v = normalize_number(words[w])) {
                    NumberEntry e;
                    e.value = *v;
                    e.text = words[w];
                    e.location.source = NumberSource::ParagraphWord;
                    e.location.paragraph = p;
                    e.location.sentence = s;
                    e.location.word = w;
                    index.entries.push_back(std::move(e));
                }
            }
        }
    }
    return index;
}

void validate(const HybridExample& ex) {
    const std::string who = " (question " + ex.question_id + ")";
    if (ex.table.empty() || ex.table.front().empty()) throw SchemaError("table is empty" + who);
    for (const auto& row : ex.table) {
        if (row.size() != ex.table.front().size()) throw SchemaError("table is not rectangular" + who);
    }
    for (std::size_t i = 1; i < ex.paragraphs.size(); ++i) {
        if (ex.paragraphs[i].order <= ex.paragraphs[i - 1].order) {
            throw SchemaError("paragraph orders are not strictly increasing" + who);
        }
    }
    if (ex.answer_type == AnswerType::Arithmetic && trim(ex.derivation).empty()) {
        throw SchemaError("arithmetic example without derivation" + who);
    }
    if (const double* v = std::get_if<double>(&ex.answer); v && !std::isfinite(*v)) {
        throw SchemaError("non-finite answer" + who);
    }
}

json answer_to_json(const Answer& a) {
    if (const double* v = std::get_if<double>(&a)) return *v;
    return std::get<std::vector<std::string>>(a);
}

Answer answer_from_json(const json& j) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) return std::vector<std::string>{j.get<std::string>()};
    if (j.is_array()) {
        std::vector<std::string> spans;
        for (const auto& e : j) {
            if (e.is_string()) {
                spans.push_back(e.get<std::string>());
            } else if (e.is_number()) {
                spans.push_back(e.dump());
            } else {
                throw SchemaError("answer list holds a non-string element");
            }
        }
        return spans;
    }
    if (j.is_null()) return std::vector<std::string>{};
    throw SchemaError("answer must be a number, string or list");
}

namespace {

const json& require(const json& obj, const char* field, const std::string& where) {
    if (!obj.is_object() || !obj.contains(field)) {
        throw SchemaError("missing required field '" + std::string(field) + "' in " + where);
    }
    return obj.at(field);
}

std::string as_string(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_null()) return "";
    return j.dump();
}

std::vector<std::vector<std::string>> read_table(const json& j, const std::string& where) {
    if (!j.is_array()) throw SchemaError("field 'table.table' must be an array in " + where);
    std::vector<std::vector<std::string>> table;
    for (const auto& row : j) {
        if (!row.is_array()) throw SchemaError("table row must be an array in " + where);
        std::vector<std::string> r;
        for (const auto& cell : row) r.push_back(as_string(cell));
        table.push_back(std::move(r));
    }
    return table;
}

std::string context_uid(const json& ctx, std::size_t position) {
    if (ctx.is_object() && ctx.contains("table") && ctx["table"].is_object() && ctx["table"].contains("uid")) {
        return as_string(ctx["table"]["uid"]);
    }
    return "#" + std::to_string(position);
}

}  // namespace

std::vector<HybridExample> parse_dataset(std::string_view json_text, const LoadOptions& opts) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("malformed JSON: ") + e.what(), e.byte);
    }
    if (!root.is_array()) throw SchemaError("dataset root must be a JSON array of contexts");

    std::vector<HybridExample> out;
    for (std::size_t ci = 0; ci < root.size(); ++ci) {
        const json& ctx = root[ci];
        const std::string uid = context_uid(ctx, ci);
        const std::string where = "context " + uid;
        const json& table_obj = require(ctx, "table", where);
        auto table = read_table(require(table_obj, "table", where), where);

        std::vector<Paragraph> paragraphs;
        const json& paras = require(ctx, "paragraphs", where);
        if (!paras.is_array()) throw SchemaError("field 'paragraphs' must be an array in " + where);
        for (const auto& p : paras) {
            Paragraph para;
            para.order = require(p, "order", where).get<int>();
            para.text = as_string(require(p, "text", where));
            paragraphs.push_back(std::move(para));
        }
        std::stable_sort(paragraphs.begin(), paragraphs.end(),
                         [](const Paragraph& a, const Paragraph& b) { return a.order < b.order; });

        const json& questions = require(ctx, "questions", where);
        if (!questions.is_array()) throw SchemaError("field 'questions' must be an array in " + where);
        for (const auto& q : questions) {
            HybridExample ex;
            ex.context_id = uid;
            ex.question_id = as_string(require(q, "uid", where));
            ex.question_text = as_string(require(q, "question", where));
            ex.question = tokenize_words(ex.question_text);
            ex.table = table;
            ex.paragraphs = paragraphs;
            const std::string qwhere = where + " question " + ex.question_id;
            if (opts.require_gold || q.contains("answer")) {
                ex.answer = answer_from_json(require(q, "answer", qwhere));
                ex.answer_type = parse_answer_type(as_string(require(q, "answer_type", qwhere)));
                ex.answer_from = parse_answer_from(as_string(require(q, "answer_from", qwhere)));
                if (q.contains("derivation")) ex.derivation = as_string(q["derivation"]);
                if (q.contains("scale")) ex.scale = parse_scale(as_string(q["scale"]));
            }
            validate(ex);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<HybridExample> load_dataset(const std::filesystem::path& path, const LoadOptions& opts) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str(), opts);
}

json to_json(const HybridExample& ex) {
    json paras = json::array();
    for (const auto& p : ex.paragraphs) paras.push_back({{"order", p.order}, {"text", p.text}});
    return json{
        {"question_id", ex.question_id},
        {"context_id", ex.context_id},
        {"question", ex.question_text},
        {"table", ex.table},
        {"paragraphs", paras},
        {"answer", answer_to_json(ex.answer)},
        {"derivation", ex.derivation},
        {"answer_type", to_string(ex.answer_type)},
        {"answer_from", to_string(ex.answer_from)},
        {"scale", to_string(ex.scale)},
    };
}

HybridExample example_from_json(const json& j) {
    HybridExample ex;
    const std::string where = "canonical example";
    ex.question_id = require(j, "question_id", where).get<std::string>();
    const std::string qwhere = "example " + ex.question_id;
    ex.context_id = j.value("context_id", "");
    ex.question_text = require(j, "question", qwhere).get<std::string>();
    ex.question = tokenize_words(ex.question_text);
    ex.table = read_table(require(j, "table", qwhere), qwhere);
    for (const auto& p : require(j, "paragraphs", qwhere)) {
        ex.paragraphs.push_back({require(p, "order", qwhere).get<int>(), require(p, "text", qwhere).get<std::string>()});
    }
    ex.answer = answer_from_json(require(j, "answer", qwhere));
    ex.derivation = j.value("derivation", "");
    ex.answer_type = parse_answer_type(require(j, "answer_type", qwhere).get<std::string>());
    ex.answer_from = parse_answer_from(require(j, "answer_from", qwhere).get<std::string>());
    ex.scale = parse_scale(j.value("scale", ""));
    validate(ex);
    return ex;
}

std::string to_jsonl(const std::vector<HybridExample>& examples) {
    std::string out;
    for (const auto& ex : examples) {
        out += to_json(ex).dump();
        out += '\n';
    }
    return out;
}

std::vector<HybridExample> parse_jsonl(std::string_view text) {
    std::vector<HybridExample> out;
    std::size_t offset = 0;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string_view::npos) end = text.size();
        auto line = trim(text.substr(offset, end - offset));
        if (!line.empty()) {
            try {
                out.push_back(example_from_json(json::parse(line)));
            } catch (const json::parse_error& e) {
                throw ParseError(std::string("malformed JSONL line: ") + e.what(), offset + e.byte);
            }
        }
        offset = end + 1;
    }
    return out;
}

SplitStats split_stats(const std::vector<HybridExample>& examples) {
    SplitStats st;
    std::set<std::string> contexts;
    for (const auto& ex : examples) {
        contexts.insert(ex.context_id);
        ++st.questions;
        ++st.grid[static_cast<int>(ex.answer_type)][static_cast<int>(ex.answer_from)];
    }
    st.contexts = contexts.size();
    return st;
}

}  // namespace reghnt
