#include "reghnt/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>

namespace reghnt {

namespace {

const char* const kItems[] = {"Revenue",          "Cost of sales",   "Net income",       "Operating expenses",
                              "Gross profit",     "Interest income", "Marketing costs",  "Service revenue",
                              "Product sales",    "Payroll costs",   "Rental income",    "Freight expenses",
                              "Licensing fees",   "Travel costs",    "Insurance claims", "Dividend income"};
const char* const kProducts[] = {"industrial pumps", "cloud storage",  "medical devices", "payroll software",
                                 "consumer loans",   "solar panels",   "freight services", "pet food",
                                 "office furniture", "mobile games",   "steel pipes",     "dental implants"};

struct Unit {
    const char* header;
    Scale scale;
};
const Unit kUnits[] = {{"$ in thousands", Scale::Thousand}, {"$ in millions", Scale::Million}, {"Amount", Scale::None}};

std::string fixed1(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", v);
    return buf;
}

std::string with_commas(long v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
}

std::string join_count(const std::vector<std::string>& parts) {
    std::string out;
    for (const auto& p : parts) {
        if (!out.empty()) out += "##";
        out += p;
    }
    return out;
}

}  // namespace

std::vector<HybridExample> synthetic_corpus(std::size_t questions, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<HybridExample> out;
    std::size_t context = 0;
    while (out.size() < questions) {
        ++context;
        const Unit& unit = kUnits[rng() % 3];
        std::vector<std::string> items(std::begin(kItems), std::end(kItems));
        std::shuffle(items.begin(), items.end(), rng);
        items.resize(3);
        std::uniform_real_distribution<double> val(100.0, 999.0);
        std::vector<std::vector<std::string>> table{{unit.header, "2019", "2018"}};
        std::vector<std::pair<double, double>> values;
        for (const auto& it : items) {
            double a = std::round(val(rng) * 10) / 10, b = std::round(val(rng) * 10) / 10;
            while (b == a) b = std::round(val(rng) * 10) / 10;
            values.emplace_back(a, b);
            table.push_back({it, fixed1(a), fixed1(b)});
        }
        const std::string product = kProducts[rng() % std::size(kProducts)];
        const long headcount = 1000 + static_cast<long>(rng() % 9000);
        Paragraph para;
        para.order = 1;
        para.text = "The company mainly sells " + product + ". Its headcount was " + with_commas(headcount) +
                    " employees at the end of 2019.";

        const int kTemplates = 6;
        int first = static_cast<int>(rng() % kTemplates);
        for (int k = 0; k < kTemplates && out.size() < questions; ++k) {
            int tpl = (first + k) % kTemplates;
            std::size_t row = rng() % items.size();
            HybridExample ex;
            ex.context_id = "toy-c" + std::to_string(context);
            ex.question_id = ex.context_id + "-q" + std::to_string(k + 1);
            ex.table = table;
            ex.paragraphs = {para};
            std::string item = items[row];
            std::string lower = lowercase(item);
            auto [v19, v18] = values[row];
            switch (tpl) {
            case 0:
                ex.question_text = "What is the change in " + lower + " from 2018 to 2019?";
                ex.derivation = fixed1(v19) + " - " + fixed1(v18);
                ex.answer = std::round((v19 - v18) * 100) / 100;
                ex.answer_type = AnswerType::Arithmetic;
                ex.answer_from = AnswerFrom::Table;
                ex.scale = unit.scale;
                break;
            case 1:
                ex.question_text = "What is the " + lower + " per employee in 2019?";
                ex.derivation = fixed1(v19) + " / " + with_commas(headcount);
                ex.answer = std::round(v19 / static_cast<double>(headcount) * 100) / 100;
                ex.answer_type = AnswerType::Arithmetic;
                ex.answer_from = AnswerFrom::TableText;
                ex.scale = unit.scale;
                break;
            case 2:
                ex.question_text = "What does the company mainly sell?";
                ex.answer = std::vector<std::string>{product};
                ex.answer_type = AnswerType::Span;
                ex.answer_from = AnswerFrom::Text;
                break;
            case 3:
                ex.question_text = "What was the " + lower + " in 2018?";
                ex.answer = std::vector<std::string>{fixed1(v18)};
                ex.answer_type = AnswerType::Span;
                ex.answer_from = AnswerFrom::Table;
                ex.scale = unit.scale;
                break;
            case 4:
                ex.question_text = "Which items are listed in the table?";
                ex.answer = items;
                ex.answer_type = AnswerType::Spans;
                ex.answer_from = AnswerFrom::Table;
                break;
            default:
                ex.question_text = "How many items are listed in the table?";
                ex.derivation = join_count(items);
                ex.answer = static_cast<double>(items.size());
                ex.answer_type = AnswerType::Count;
                ex.answer_from = AnswerFrom::Table;
                break;
            }
            ex.question = tokenize_words(ex.question_text);
            validate(ex);
            out.push_back(std::move(ex));
        }
    }
    return out;
}

}  // namespace reghnt
