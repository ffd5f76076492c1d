#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "reghnt/corpus.hpp"

namespace reghnt {

// Normalized bag-of-tokens form of one answer span. Numbers become their
// two-decimal rounded value; words are lower-cased with punctuation and
// articles removed.
std::vector<std::string> normalize_span(const std::string& span);

// Scale-applied answer as a list of unique normalized spans (each a joined token string).
std::vector<std::string> answer_spans(const Answer& answer, Scale scale);

double exact_match(const Answer& pred, Scale pred_scale, const Answer& gold, Scale gold_scale);
// DROP-style F1: token-bag F1 per span pair, numbers must match exactly,
// spans aligned one-to-one to maximize the mean.
double numeracy_f1(const Answer& pred, Scale pred_scale, const Answer& gold, Scale gold_scale);

struct PredictionRecord {
    std::string question_id;
    std::vector<std::string> prefix_tokens;
    std::string op_class;
    Scale scale = Scale::None;
    Answer answer = std::vector<std::string>{};
};

nlohmann::json to_json(const PredictionRecord& p);
PredictionRecord prediction_from_json(const nlohmann::json& j);
std::vector<PredictionRecord> parse_predictions_jsonl(std::string_view text);

struct ScoreCell {
    double em_sum = 0.0;
    double f1_sum = 0.0;
    std::size_t count = 0;
    double em() const { return count ? em_sum / static_cast<double>(count) : 0.0; }
    double f1() const { return count ? f1_sum / static_cast<double>(count) : 0.0; }
};

struct ScoreReport {
    ScoreCell overall;
    ScoreCell grid[kNumAnswerTypes][kNumAnswerFroms];
    std::size_t missing = 0;
    // Questions with EM = 1 but F1 < 1 (must stay zero).
    std::size_t em_f1_violations = 0;

    nlohmann::json to_json() const;
    // Plain-text table: answer types as rows, sources as columns, EM / F1 cells.
    std::string to_table() const;
};

ScoreReport evaluate_split(const std::vector<PredictionRecord>& predictions, const std::vector<HybridExample>& golds);

}  // namespace reghnt
