#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "random_examples.hpp"
#include "reghnt/metrics.hpp"

using namespace reghnt;

namespace {

std::string fixture(const std::string& name) { return std::string(REGHNT_TEST_DATA) + "/metric_fixture/" + name; }

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

double fraction(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    auto s = j.get<std::string>();
    auto slash = s.find('/');
    if (slash == std::string::npos) return std::stod(s);
    return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

using Spans = std::vector<std::string>;

}  // namespace

TEST_CASE("exact match: scale and rounding") {
    CHECK(exact_match(5.0, Scale::Thousand, 5000.0, Scale::None) == 1.0);
    CHECK(exact_match(0.9614, Scale::None, 0.96, Scale::None) == 1.0);
    CHECK(exact_match(0.97, Scale::None, 0.96, Scale::None) == 0.0);
    CHECK(exact_match(Spans{"net sales"}, Scale::None, Spans{"net sales"}, Scale::None) == 1.0);
    CHECK(exact_match(Spans{"The Net Sales."}, Scale::None, Spans{"net sales"}, Scale::None) == 1.0);
    CHECK(exact_match(Spans{"1,027"}, Scale::None, 1027.0, Scale::None) == 1.0);
    CHECK(exact_match(Spans{"5.2"}, Scale::Million, Spans{"5.2"}, Scale::None) == 0.0);
    // Rounding happens in the answer's own units.
    CHECK(exact_match(0.0828, Scale::Thousand, 0.08, Scale::Thousand) == 1.0);
    CHECK(exact_match(0.0828, Scale::Thousand, 80.0, Scale::None) == 1.0);
    CHECK(exact_match(0.96, Scale::Percent, 0.0096, Scale::None) == 1.0);
}

TEST_CASE("numeracy F1") {
    CHECK(numeracy_f1(Spans{"net sales"}, Scale::None, Spans{"total net sales"}, Scale::None) == doctest::Approx(0.8));
    CHECK(numeracy_f1(Spans{"net sales"}, Scale::None, Spans{"net sales"}, Scale::None) == 1.0);
    CHECK(numeracy_f1(Spans{"cost of revenue"}, Scale::None, Spans{"net sales"}, Scale::None) == 0.0);
    CHECK(numeracy_f1(0.97, Scale::None, 0.96, Scale::None) == 0.0);
    // Numbers get no partial credit even when other words overlap.
    CHECK(numeracy_f1(Spans{"revenue 5.3"}, Scale::None, Spans{"revenue 5.2"}, Scale::None) == 0.0);
}

TEST_CASE("metric fixture reproduces hand-scored cells") {
    auto golds = load_dataset(fixture("gold.json"));
    auto preds = parse_predictions_jsonl(slurp(fixture("pred.jsonl")));
    auto expected = nlohmann::json::parse(slurp(fixture("expected.json")));
    REQUIRE(golds.size() == 12);
    auto report = evaluate_split(preds, golds);
    for (const auto& g : golds) {
        const auto& e = expected["cases"][g.question_id];
        auto p = std::find_if(preds.begin(), preds.end(), [&](const auto& x) { return x.question_id == g.question_id; });
        CAPTURE(g.question_id);
        CHECK(std::abs(exact_match(p->answer, p->scale, g.answer, g.scale) - fraction(e["em"])) < 1e-12);
        CHECK(std::abs(numeracy_f1(p->answer, p->scale, g.answer, g.scale) - fraction(e["f1"])) < 1e-12);
        const auto& cell = report.grid[static_cast<int>(g.answer_type)][static_cast<int>(g.answer_from)];
        CHECK(cell.count == 1);
        CHECK(std::abs(cell.em() - fraction(e["em"])) < 1e-12);
        CHECK(std::abs(cell.f1() - fraction(e["f1"])) < 1e-12);
    }
    CHECK(std::abs(report.overall.em() - fraction(expected["overall"]["em"])) < 1e-12);
    CHECK(std::abs(report.overall.f1() - fraction(expected["overall"]["f1"])) < 1e-12);
    CHECK(report.em_f1_violations == 0);
    CHECK(report.missing == 0);
    // Cells aggregate to the overall score.
    double em = 0;
    for (auto& row : report.grid)
        for (auto& c : row) em += c.em_sum;
    CHECK(std::abs(em / 12 - report.overall.em()) < 1e-9);
    CHECK(report.to_table().find("overall EM 50.00") != std::string::npos);
}

TEST_CASE("evaluate_split: trivial sets and missing predictions") {
    auto golds = load_dataset(fixture("gold.json"));
    std::vector<PredictionRecord> perfect;
    for (const auto& g : golds) {
        PredictionRecord p;
        p.question_id = g.question_id;
        p.answer = g.answer;
        p.scale = g.scale;
        perfect.push_back(p);
    }
    auto r = evaluate_split(perfect, golds);
    CHECK(r.overall.em() == 1.0);
    CHECK(r.overall.f1() == 1.0);
    perfect.pop_back();
    r = evaluate_split(perfect, golds);
    CHECK(r.missing == 1);
    CHECK(r.overall.em() == doctest::Approx(11.0 / 12));

    std::vector<HybridExample> nums(golds.begin() + 9, golds.end());
    std::vector<PredictionRecord> half;
    for (std::size_t i = 0; i < nums.size(); ++i) {
        PredictionRecord p;
        p.question_id = nums[i].question_id;
        p.answer = i < 1 ? nums[i].answer : Answer{-1.0};
        p.scale = nums[i].scale;
        half.push_back(p);
    }
    nums.pop_back();
    CHECK(evaluate_split(half, nums).overall.em() == 0.5);
}

TEST_CASE("property: EM implies F1, order and scale invariance") {
    std::mt19937 rng(3);
    std::uniform_int_distribution<int> coin(0, 3);
    std::uniform_real_distribution<double> val(-5000, 5000);
    const Scale scales[] = {Scale::None, Scale::Thousand, Scale::Million, Scale::Billion, Scale::Percent};
    for (int i = 0; i < 500; ++i) {
        Answer gold, pred;
        Scale gs = scales[coin(rng)], ps = scales[coin(rng)];
        if (coin(rng) < 2) {
            double v = std::round(val(rng) * 100) / 100;
            gold = v;
            pred = coin(rng) == 0 ? Answer{v + 0.5} : Answer{v};
            double pv = std::get<double>(pred);
            // (v, Thousand) scores like (1000 v, None).
            CHECK(exact_match(pv, Scale::Thousand, gold, gs) == exact_match(pv * 1000, Scale::None, gold, gs));
            CHECK(numeracy_f1(pv, Scale::Thousand, gold, gs) == numeracy_f1(pv * 1000, Scale::None, gold, gs));
        } else {
            Spans g, p;
            for (int k = 0; k <= coin(rng); ++k) g.push_back(testing::random_phrase(rng, 1, 3));
            for (int k = 0; k <= coin(rng); ++k) p.push_back(coin(rng) == 0 ? g[0] : testing::random_phrase(rng, 1, 3));
            gold = g;
            pred = p;
            Spans rev(p.rbegin(), p.rend());
            CHECK(exact_match(rev, ps, gold, gs) == exact_match(pred, ps, gold, gs));
            CHECK(numeracy_f1(rev, ps, gold, gs) == doctest::Approx(numeracy_f1(pred, ps, gold, gs)));
        }
        double em = exact_match(pred, ps, gold, gs), f1 = numeracy_f1(pred, ps, gold, gs);
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 1.0 + 1e-12);
        if (em == 1.0) CHECK(f1 == doctest::Approx(1.0));
        CHECK(exact_match(gold, gs, gold, gs) == 1.0);
    }
}

TEST_CASE("prediction JSONL round trip") {
    PredictionRecord p;
    p.question_id = "q1";
    p.prefix_tokens = {"\xC3\xB7", "109.7", "\xC3\x97", "0.41", "278.29"};
    p.op_class = "arithmetic";
    p.scale = Scale::Percent;
    p.answer = 0.96145;
    auto back = parse_predictions_jsonl(to_json(p).dump() + "\n\n");
    REQUIRE(back.size() == 1);
    CHECK(back[0].prefix_tokens == p.prefix_tokens);
    CHECK(back[0].scale == Scale::Percent);
    CHECK(std::get<double>(back[0].answer) == 0.96145);
    CHECK_THROWS_AS(parse_predictions_jsonl("{bad"), ParseError);
}
