#include "reghnt/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "reghnt/expr.hpp"

namespace reghnt {

namespace {

std::string round2(double v) {
    double r = std::round(v * 100.0) / 100.0;
    return format_number(r);
}

bool is_article(const std::string& w) { return w == "a" || w == "an" || w == "the"; }

std::string strip_punct(const std::string& w) {
    std::string out;
    for (unsigned char c : w) {
        if (!std::ispunct(c)) out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::vector<std::string> split_tokens(const std::string& s) {
    std::vector<std::string> out;
    for (const auto& chunk : split_ws(s)) {
        if (normalize_number(chunk)) {
            out.push_back(chunk);
            continue;
        }
        std::size_t start = 0;
        for (std::size_t i = 0; i <= chunk.size(); ++i) {
            if (i == chunk.size() || chunk[i] == '-') {
                if (i > start) out.push_back(chunk.substr(start, i - start));
                start = i + 1;
            }
        }
    }
    return out;
}

bool is_number_token(const std::string& t) {
    if (t.empty()) return false;
    double v = 0;
    char extra = 0;
    return std::sscanf(t.c_str(), "%lf%c", &v, &extra) == 1;
}

double pair_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    std::set<std::string> p(pred.begin(), pred.end()), g(gold.begin(), gold.end());
    std::size_t common = 0;
    for (const auto& t : p) common += g.count(t);
    if (p.empty() && g.empty()) return 1.0;
    if (p.empty() || g.empty() || common == 0) return 0.0;
    double precision = static_cast<double>(common) / static_cast<double>(p.size());
    double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

// Gold numbers present and none of them in the prediction: no credit.
bool numbers_match(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    std::set<std::string> gn, pn;
    for (const auto& t : gold)
        if (is_number_token(t)) gn.insert(t);
    for (const auto& t : pred)
        if (is_number_token(t)) pn.insert(t);
    if (gn.empty()) return true;
    for (const auto& t : gn)
        if (pn.count(t)) return true;
    return false;
}

// Maximum-weight one-to-one assignment on a small square matrix.
double best_assignment(const std::vector<std::vector<double>>& w) {
    std::size_t n = w.size();
    if (n == 0) return 0.0;
    if (n <= 8) {
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        double best = 0.0;
        do {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += w[i][perm[i]];
            best = std::max(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        return best;
    }
    // Larger cases: greedy on descending weights.
    std::vector<std::tuple<double, std::size_t, std::size_t>> cells;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) cells.emplace_back(w[i][j], i, j);
    std::sort(cells.begin(), cells.end(), [](const auto& a, const auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::vector<bool> row(n, false), col(n, false);
    double s = 0.0;
    for (const auto& [v, i, j] : cells) {
        if (row[i] || col[j]) continue;
        row[i] = col[j] = true;
        s += v;
    }
    return s;
}

}  // namespace

std::vector<std::string> normalize_span(const std::string& span) {
    std::vector<std::string> out;
    for (const auto& tok : split_tokens(span)) {
        if (auto v = normalize_number(tok)) {
            out.push_back(round2(*v));
            continue;
        }
        std::string w = strip_punct(tok);
        if (w.empty() || is_article(w)) continue;
        out.push_back(w);
    }
    return out;
}

std::vector<std::string> answer_spans(const Answer& answer, Scale scale) {
    std::vector<std::string> raw;
    if (const double* v = std::get_if<double>(&answer)) {
        // Answers are rounded in their own units before the scale is applied.
        double r = std::round(*v * 100.0) / 100.0 * scale_factor(scale);
        raw.push_back(format_number(std::round(r * 1e8) / 1e8));
    } else {
        Answer scaled = apply_scale(answer, scale);
        raw = std::get<std::vector<std::string>>(scaled);
    }
    std::vector<std::string> out;
    for (const auto& s : raw) {
        std::string norm = join(normalize_span(s));
        if (std::find(out.begin(), out.end(), norm) == out.end()) out.push_back(norm);
    }
    return out;
}

double exact_match(const Answer& pred, Scale pred_scale, const Answer& gold, Scale gold_scale) {
    auto p = answer_spans(pred, pred_scale);
    auto g = answer_spans(gold, gold_scale);
    std::sort(p.begin(), p.end());
    std::sort(g.begin(), g.end());
    return p == g ? 1.0 : 0.0;
}

double numeracy_f1(const Answer& pred, Scale pred_scale, const Answer& gold, Scale gold_scale) {
    auto p = answer_spans(pred, pred_scale);
    auto g = answer_spans(gold, gold_scale);
    std::size_t n = std::max(p.size(), g.size());
    if (n == 0) return 1.0;
    std::vector<std::vector<double>> w(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < g.size(); ++i) {
        auto gb = split_ws(g[i]);
        for (std::size_t j = 0; j < p.size(); ++j) {
            auto pb = split_ws(p[j]);
            if (numbers_match(pb, gb)) w[i][j] = pair_f1(pb, gb);
        }
    }
    return best_assignment(w) / static_cast<double>(n);
}

nlohmann::json to_json(const PredictionRecord& p) {
    return {{"question_id", p.question_id},
            {"prefix_tokens", p.prefix_tokens},
            {"op_class", p.op_class},
            {"scale", std::string(to_string(p.scale))},
            {"answer", answer_to_json(p.answer)}};
}

PredictionRecord prediction_from_json(const nlohmann::json& j) {
    PredictionRecord p;
    p.question_id = j.at("question_id").get<std::string>();
    if (j.contains("prefix_tokens")) p.prefix_tokens = j.at("prefix_tokens").get<std::vector<std::string>>();
    if (j.contains("op_class")) p.op_class = j.at("op_class").get<std::string>();
    if (j.contains("scale")) p.scale = parse_scale(j.at("scale").get<std::string>());
    p.answer = answer_from_json(j.at("answer"));
    return p;
}

std::vector<PredictionRecord> parse_predictions_jsonl(std::string_view text) {
    std::vector<PredictionRecord> out;
    std::size_t pos = 0, line = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view row = text.substr(pos, end - pos);
        ++line;
        if (row.find_first_not_of(" \t\r") != std::string_view::npos) {
            auto j = nlohmann::json::parse(row, nullptr, false);
            if (j.is_discarded()) throw ParseError("invalid prediction JSON on line " + std::to_string(line), pos);
            try {
                out.push_back(prediction_from_json(j));
            } catch (const std::exception& e) {
                throw SchemaError("prediction line " + std::to_string(line) + ": " + e.what());
            }
        }
        pos = end + 1;
    }
    return out;
}

ScoreReport evaluate_split(const std::vector<PredictionRecord>& predictions, const std::vector<HybridExample>& golds) {
    ScoreReport r;
    for (const auto& gold : golds) {
        auto it = std::find_if(predictions.begin(), predictions.end(),
                               [&](const PredictionRecord& p) { return p.question_id == gold.question_id; });
        double em = 0.0, f1 = 0.0;
        if (it == predictions.end()) {
            ++r.missing;
        } else {
            em = exact_match(it->answer, it->scale, gold.answer, gold.scale);
            f1 = numeracy_f1(it->answer, it->scale, gold.answer, gold.scale);
            if (em == 1.0 && f1 < 1.0) ++r.em_f1_violations;
        }
        for (ScoreCell* c : {&r.overall, &r.grid[static_cast<int>(gold.answer_type)][static_cast<int>(gold.answer_from)]}) {
            c->em_sum += em;
            c->f1_sum += f1;
            ++c->count;
        }
    }
    return r;
}

nlohmann::json ScoreReport::to_json() const {
    nlohmann::json grid_json = nlohmann::json::object();
    for (int t = 0; t < kNumAnswerTypes; ++t) {
        for (int f = 0; f < kNumAnswerFroms; ++f) {
            const ScoreCell& c = grid[t][f];
            grid_json[std::string(to_string(static_cast<AnswerType>(t)))][std::string(to_string(static_cast<AnswerFrom>(f)))] = {
                {"em", c.em()}, {"f1", c.f1()}, {"count", c.count}};
        }
    }
    return {{"em", overall.em()}, {"f1", overall.f1()},       {"count", overall.count},
            {"missing", missing}, {"breakdown", grid_json}};
}

std::string ScoreReport::to_table() const {
    std::ostringstream out;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-12s", "");
    out << buf;
    for (int f = 0; f < kNumAnswerFroms; ++f) {
        std::snprintf(buf, sizeof buf, " %17s", std::string(to_string(static_cast<AnswerFrom>(f))).c_str());
        out << buf;
    }
    out << '\n';
    for (int t = 0; t < kNumAnswerTypes; ++t) {
        std::snprintf(buf, sizeof buf, "%-12s", std::string(to_string(static_cast<AnswerType>(t))).c_str());
        out << buf;
        for (int f = 0; f < kNumAnswerFroms; ++f) {
            const ScoreCell& c = grid[t][f];
            if (c.count == 0) {
                std::snprintf(buf, sizeof buf, " %17s", "-");
            } else {
                std::snprintf(buf, sizeof buf, " %7.2f / %7.2f", 100.0 * c.em(), 100.0 * c.f1());
            }
            out << buf;
        }
        out << '\n';
    }
    std::snprintf(buf, sizeof buf, "overall EM %.2f  F1 %.2f  (%zu questions, %zu missing)\n", 100.0 * overall.em(),
                  100.0 * overall.f1(), overall.count, missing);
    out << buf;
    return out.str();
}

}  // namespace reghnt
