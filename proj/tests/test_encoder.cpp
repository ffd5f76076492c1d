#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "random_examples.hpp"
#include "reghnt/encoder.hpp"
#include "reghnt/gradcheck.hpp"

using namespace reghnt;

namespace {

ModelConfig tiny_config(std::size_t d = 8, std::size_t heads = 2, std::size_t layers = 1) {
    ModelConfig c;
    c.d = d;
    c.heads = heads;
    c.layers = layers;
    c.vocab = 101;
    return c;
}

void randomize(ParamStore& store, unsigned seed, double bound = 0.5) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < store.size(); ++i) ParamStore::init_uniform(store[i], bound, rng);
}

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1, 1);
    Tensor t(r, c);
    for (double& v : t.data) v = d(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.same_shape(b));
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

// Dense attentive pooling: softmax_i(tanh(e_i W) v) weighted sum of e_i.
Tensor dense_pool(const Tensor& e, const Tensor& w, const Tensor& v) {
    std::vector<double> s(e.rows, 0.0);
    for (std::size_t i = 0; i < e.rows; ++i) {
        for (std::size_t k = 0; k < w.cols; ++k) {
            double proj = 0;
            for (std::size_t j = 0; j < e.cols; ++j) proj += e(i, j) * w(j, k);
            s[i] += std::tanh(proj) * v.data[k];
        }
    }
    double mx = *std::max_element(s.begin(), s.end()), z = 0;
    for (double& x : s) z += (x = std::exp(x - mx));
    Tensor out(1, e.cols);
    for (std::size_t i = 0; i < e.rows; ++i)
        for (std::size_t j = 0; j < e.cols; ++j) out.data[j] += s[i] / z * e(i, j);
    return out;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One LSTM direction over rows of x in the given order; returns states in that order.
std::vector<std::vector<double>> dense_lstm(const Tensor& x, const std::vector<int>& order, const Parameter& wx,
                                            const Parameter& wh, const Parameter& b) {
    std::size_t hd = wh.value.rows;
    std::vector<double> h(hd, 0.0), c(hd, 0.0);
    std::vector<std::vector<double>> out;
    for (int row : order) {
        std::vector<double> gates(4 * hd);
        for (std::size_t k = 0; k < 4 * hd; ++k) {
            double s = b.value.data[k];
            for (std::size_t j = 0; j < x.cols; ++j) s += x(row, j) * wx.value(j, k);
            for (std::size_t j = 0; j < hd; ++j) s += h[j] * wh.value(j, k);
            gates[k] = s;
        }
        for (std::size_t k = 0; k < hd; ++k) {
            double i = sigm(gates[k]), f = sigm(gates[hd + k]), g = std::tanh(gates[2 * hd + k]), o = sigm(gates[3 * hd + k]);
            c[k] = f * c[k] + i * g;
            h[k] = o * std::tanh(c[k]);
        }
        out.push_back(h);
    }
    return out;
}

HybridExample small_example() {
    HybridExample ex;
    ex.question_id = "q";
    ex.context_id = "c";
    ex.question_text = "What was revenue in 2019";
    ex.question = tokenize_words(ex.question_text);
    ex.table = {{"", "2019", "2018"}, {"Revenue", "5.2", "4.8"}};
    ex.paragraphs = {{1, "Revenue grew 8%. Costs fell."}, {2, "Net income was 7 million."}};
    return ex;
}

HeteroGraph two_node_graph() {
    HeteroGraph g;
    for (int i = 0; i < 2; ++i) {
        GraphNode n;
        n.id = i;
        n.type = NodeType::QWord;
        n.text = i == 0 ? "net" : "sales";
        n.words = {n.text};
        n.word = i;
        g.nodes.push_back(n);
    }
    g.num_question = 2;
    g.edges = {{0, 1, Relation::DistancePlus1, false}, {1, 0, Relation::DistancePlus1, true},
               {0, 0, Relation::Self, false},          {1, 1, Relation::Self, false}};
    return g;
}

}  // namespace

TEST_CASE("embed_tokens: hashing is deterministic and keyed by piece") {
    auto cfg = tiny_config();
    cfg.vocab = 50021;
    HybridExample ex = small_example();
    ex.question = {"revenue", "Revenue", "revenue"};
    auto g = build_graph(ex);
    auto layout = embed_tokens(g, cfg);
    REQUIRE(layout.words.size() >= 3);
    CHECK(layout.words[0].rows == layout.words[2].rows);
    CHECK(layout.words[0].rows == layout.words[1].rows);
    CHECK(hash_piece("rev", 1, 50021) == hash_piece("rev", 1, 50021));
    CHECK(hash_piece("rev", 1, 50021) != hash_piece("rev", 2, 50021));
    // Numbers stay whole and are typed as numbers.
    bool saw_number = false;
    for (const auto& w : layout.words) {
        if (w.pieces.size() == 1 && w.pieces[0] == "5.2") {
            CHECK(w.number);
            saw_number = true;
        }
    }
    CHECK(saw_number);
    // Empty corner cell and sentence tokens carry special pieces.
    CHECK(layout.words[layout.node_first_word[g.cell_node(0, 0)]].pieces == std::vector<std::string>{"[EMPTY]"});
    int sent = g.sentence_nodes.at(0).at(0);
    CHECK(layout.words[layout.node_first_word[sent]].pieces == std::vector<std::string>{"[SENT]"});
}

TEST_CASE("embed_tokens: empty question has no question rows") {
    HybridExample ex = small_example();
    ex.question.clear();
    auto g = build_graph(ex);
    CHECK(g.num_question == 0);
    auto layout = embed_tokens(g, tiny_config());
    CHECK(layout.words.front().node == 0);
    CHECK(g.nodes.front().source == SourceType::Table);
}

TEST_CASE("hash collision rate on the sample corpus vocabulary") {
    auto examples = load_dataset(std::string(REGHNT_SOURCE_DIR) + "/data/sample_tatqa.json");
    std::set<std::string> pieces;
    for (const auto& ex : examples) {
        auto g = build_graph(ex);
        for (const auto& w : embed_tokens(g, tiny_config()).words)
            for (const auto& p : w.pieces) pieces.insert(lowercase(p));
    }
    std::set<std::size_t> buckets;
    for (const auto& p : pieces) buckets.insert(hash_piece(p, ModelConfig{}.hash_seed, 50021));
    double collision = 1.0 - static_cast<double>(buckets.size()) / static_cast<double>(pieces.size());
    MESSAGE("distinct pieces " << pieces.size() << ", collision rate " << collision);
    CHECK(collision < 0.05);
}

TEST_CASE("pool_word: singleton, duplicates and dense oracle") {
    ParamStore store;
    Encoder enc(store, tiny_config());
    randomize(store, 1);
    std::mt19937_64 rng(2);
    for (bool number : {false, true}) {
        ad::Tape t;
        Tensor one = random_tensor(1, 8, rng);
        CHECK(max_abs_diff(enc.pool_word(t, t.constant(one), number).value(), one) < 1e-15);

        Tensor twin(2, 8);
        std::copy(one.data.begin(), one.data.end(), twin.data.begin());
        std::copy(one.data.begin(), one.data.end(), twin.data.begin() + 8);
        CHECK(max_abs_diff(enc.pool_word(t, t.constant(twin), number).value(), one) < 1e-15);

        Tensor three = random_tensor(3, 8, rng);
        std::string base = number ? "pool.word.number" : "pool.word.text";
        auto oracle = dense_pool(three, store.at(base + ".W").value, store.at(base + ".v").value);
        CHECK(max_abs_diff(enc.pool_word(t, t.constant(three), number).value(), oracle) < 1e-10);
    }
}

TEST_CASE("pool_node: BiLSTM plus attentive pooling matches a dense oracle") {
    ParamStore store;
    Encoder enc(store, tiny_config());
    randomize(store, 3);
    std::mt19937_64 rng(4);
    Tensor words = random_tensor(5, 8, rng);
    for (SourceType src : {SourceType::Question, SourceType::Table, SourceType::Paragraph}) {
        std::string base = src == SourceType::Question ? "pool.node.question" : src == SourceType::Table ? "pool.node.table" : "pool.node.paragraph";
        auto fw = dense_lstm(words, {0, 1, 2, 3, 4}, store.at(base + ".lstm.fw.Wx"), store.at(base + ".lstm.fw.Wh"),
                             store.at(base + ".lstm.fw.b"));
        auto bw = dense_lstm(words, {4, 3, 2, 1, 0}, store.at(base + ".lstm.bw.Wx"), store.at(base + ".lstm.bw.Wh"),
                             store.at(base + ".lstm.bw.b"));
        Tensor states(5, 8);
        for (std::size_t i = 0; i < 5; ++i) {
            for (std::size_t k = 0; k < 4; ++k) {
                states(i, k) = fw[i][k];
                states(i, 4 + k) = bw[4 - i][k];
            }
        }
        auto oracle = dense_pool(states, store.at(base + ".W").value, store.at(base + ".v").value);
        ad::Tape t;
        auto got = enc.pool_node(t, t.constant(words), src).value();
        CHECK(max_abs_diff(got, oracle) < 1e-10);

        Tensor reversed(5, 8);
        for (std::size_t i = 0; i < 5; ++i)
            for (std::size_t k = 0; k < 8; ++k) reversed(i, k) = words(4 - i, k);
        CHECK(max_abs_diff(enc.pool_node(t, t.constant(reversed), src).value(), got) > 1e-6);
    }

    // Single word: the pooled vector is the concatenated BiLSTM state of that word.
    Tensor one = random_tensor(1, 8, rng);
    auto fw = dense_lstm(one, {0}, store.at("pool.node.table.lstm.fw.Wx"), store.at("pool.node.table.lstm.fw.Wh"),
                         store.at("pool.node.table.lstm.fw.b"));
    auto bw = dense_lstm(one, {0}, store.at("pool.node.table.lstm.bw.Wx"), store.at("pool.node.table.lstm.bw.Wh"),
                         store.at("pool.node.table.lstm.bw.b"));
    ad::Tape t;
    auto got = enc.pool_node(t, t.constant(one), SourceType::Table).value();
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(got.data[k] == doctest::Approx(fw[0][k]).epsilon(1e-12));
        CHECK(got.data[4 + k] == doctest::Approx(bw[0][k]).epsilon(1e-12));
    }
}

TEST_CASE("batched pooling agrees with per-node pooling") {
    ParamStore store;
    Encoder enc(store, tiny_config());
    randomize(store, 5);
    auto g = build_graph(small_example());
    auto layout = embed_tokens(g, enc.config());
    ad::Tape t;
    auto batched = enc.pool(t, g, layout).value();
    REQUIRE(batched.rows == g.size());
    for (std::size_t n = 0; n < g.size(); ++n) {
        std::vector<ad::Var> words;
        for (int w = layout.node_first_word[n]; w < layout.node_first_word[n] + layout.node_num_words[n]; ++w) {
            auto pieces = t.gather_param_rows(enc.embedding(), layout.words[w].rows);
            words.push_back(enc.pool_word(t, pieces, layout.words[w].number));
        }
        auto node = enc.pool_node(t, ad::concat_rows(words), g.nodes[n].source).value();
        for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(node.data[k] - batched(n, k)) < 1e-12);
    }
}

TEST_CASE("relational attention: singleton and dense oracle") {
    SUBCASE("single node with identity values") {
        ParamStore store;
        Encoder enc(store, tiny_config());
        randomize(store, 6);
        store.at("rgat0.Wv").value.fill(0.0);
        for (std::size_t i = 0; i < 8; ++i) store.at("rgat0.Wv").value(i, i) = 1.0;
        store.at("rgat0.rV").value.fill(0.0);
        HeteroGraph g;
        GraphNode n;
        n.words = {"x"};
        g.nodes = {n};
        g.num_question = 1;
        g.edges = {{0, 0, Relation::Self, false}};
        std::mt19937_64 rng(7);
        Tensor x = random_tensor(1, 8, rng);
        ad::Tape t;
        CHECK(max_abs_diff(enc.relational_attention(t, t.constant(x), g, 0).value(), x) < 1e-15);
    }
    SUBCASE("two nodes against a masked dense implementation") {
        ParamStore store;
        Encoder enc(store, tiny_config());
        randomize(store, 8);
        auto g = two_node_graph();
        std::mt19937_64 rng(9);
        Tensor x = random_tensor(2, 8, rng);
        const Tensor& wq = store.at("rgat0.Wq").value;
        const Tensor& wk = store.at("rgat0.Wk").value;
        const Tensor& wv = store.at("rgat0.Wv").value;
        const Tensor& rk = store.at("rgat0.rK").value;
        const Tensor& rv = store.at("rgat0.rV").value;
        auto proj = [&](const Tensor& w) {
            Tensor o(2, 8);
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t k = 0; k < 8; ++k)
                    for (std::size_t j = 0; j < 8; ++j) o(i, k) += x(i, j) * w(j, k);
            return o;
        };
        Tensor q = proj(wq), k = proj(wk), v = proj(wv);
        // rel[i][j]: relation id of the edge j -> i, -1 when absent.
        int rel[2][2] = {{-1, -1}, {-1, -1}};
        for (const auto& e : g.edges) rel[e.dst][e.src] = e.relation_id();
        Tensor oracle(2, 8);
        for (int i = 0; i < 2; ++i) {
            for (int h = 0; h < 2; ++h) {
                double score[2], z = 0;
                for (int j = 0; j < 2; ++j) {
                    double s = 0;
                    for (int c = 0; c < 4; ++c) s += q(i, h * 4 + c) * (k(j, h * 4 + c) + rk(rel[i][j], c));
                    score[j] = std::exp(s / 2.0);
                    z += score[j];
                }
                for (int j = 0; j < 2; ++j)
                    for (int c = 0; c < 4; ++c) oracle(i, h * 4 + c) += score[j] / z * (v(j, h * 4 + c) + rv(rel[i][j], c));
            }
        }
        ad::Tape t;
        CHECK(max_abs_diff(enc.relational_attention(t, t.constant(x), g, 0).value(), oracle) < 1e-8);
    }
}

TEST_CASE("property: attention rows sum to one per node, head and layer") {
    std::mt19937 rng(10);
    ParamStore store;
    Encoder enc(store, tiny_config(8, 2, 2));
    randomize(store, 11, 1.0);
    double worst = 0;
    for (int i = 0; i < 25; ++i) {
        auto ex = testing::random_example(rng, 4, 3);
        auto g = build_graph(ex);
        ad::Tape t;
        auto encd = enc.encode(t, g, true);
        REQUIRE(encd.attention.size() == 2);
        for (const auto& att : encd.attention) {
            Tensor sums(g.size(), att.cols);
            for (std::size_t e = 0; e < g.edges.size(); ++e)
                for (std::size_t h = 0; h < att.cols; ++h) sums(g.edges[e].dst, h) += att(e, h);
            for (double s : sums.data) worst = std::max(worst, std::abs(s - 1.0));
        }
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("encode: shapes, empty stack and source means") {
    ParamStore store;
    auto cfg = tiny_config(8, 2, 0);
    Encoder enc(store, cfg);
    randomize(store, 12);
    auto g = build_graph(small_example());
    ad::Tape t;
    auto e = enc.encode(t, g);
    auto pooled = enc.pool(t, g, embed_tokens(g, cfg)).value();
    REQUIRE(e.Z.rows() == g.size() + 1);
    for (std::size_t n = 0; n < g.size(); ++n)
        for (std::size_t k = 0; k < 8; ++k) CHECK(e.Z.value()(n + 1, k) == pooled(n, k));
    for (std::size_t k = 0; k < 8; ++k) {
        double m = 0;
        for (std::size_t n = 0; n < g.num_question; ++n) m += pooled(n, k);
        CHECK(e.h_q.value().data[k] == doctest::Approx(m / g.num_question).epsilon(1e-12));
        CHECK(e.cls.value().data[k] == e.Z.value()(0, k));
    }
}

TEST_CASE("encode: edge order does not matter") {
    ParamStore store;
    Encoder enc(store, tiny_config(8, 2, 2));
    randomize(store, 13);
    auto g = build_graph(small_example());
    ad::Tape t1;
    auto a = enc.encode(t1, g).Z.value();
    std::mt19937 rng(14);
    std::shuffle(g.edges.begin(), g.edges.end(), rng);
    ad::Tape t2;
    auto b = enc.encode(t2, g).Z.value();
    CHECK(max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("encode: swapping paragraphs permutes node rows") {
    ParamStore store;
    Encoder enc(store, tiny_config(8, 2, 2));
    randomize(store, 15);
    auto ex = small_example();
    auto swapped = ex;
    std::swap(swapped.paragraphs[0].text, swapped.paragraphs[1].text);
    auto g1 = build_graph(ex), g2 = build_graph(swapped);
    REQUIRE(g1.size() == g2.size());
    auto key = [](const GraphNode& n, bool flip) {
        int p = n.paragraph < 0 ? -1 : (flip ? 1 - n.paragraph : n.paragraph);
        return std::make_tuple(static_cast<int>(n.source), n.row, n.col, p, n.sentence, n.word);
    };
    std::map<std::tuple<int, int, int, int, int, int>, int> where;
    for (const auto& n : g2.nodes) where[key(n, false)] = n.id;
    ad::Tape t1, t2;
    auto z1 = enc.encode(t1, g1).Z.value();
    auto z2 = enc.encode(t2, g2).Z.value();
    for (const auto& n : g1.nodes) {
        int m = where.at(key(n, true));
        for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(z1(n.id + 1, k) - z2(m + 1, k)) < 1e-9);
    }
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(z1(0, k) - z2(0, k)) < 1e-9);
}

TEST_CASE("encode: default depth on the stock-option context") {
    auto ex = load_dataset(std::string(REGHNT_TEST_DATA) + "/stock_options.json").at(0);
    ModelConfig cfg;
    cfg.d = 32;
    REQUIRE(cfg.layers == 8);
    REQUIRE(cfg.heads == 8);
    ParamStore store;
    Encoder enc(store, cfg);
    std::mt19937_64 rng(cfg.init_seed);
    enc.init(rng);
    auto g = build_graph(ex);
    ad::Tape t;
    auto e = enc.encode(t, g);
    CHECK(e.Z.rows() == g.size() + 1);
    CHECK(e.Z.value().all_finite());
}

TEST_CASE("initialization") {
    ParamStore store;
    Encoder enc(store, tiny_config(8, 2, 1));
    std::mt19937_64 rng(1);
    enc.init(rng);
    for (double v : store.at("rgat0.rK").value.data) CHECK(v == 0.0);
    for (double v : store.at("rgat0.ln1.g").value.data) CHECK(v == 1.0);
    for (double v : store.at("rgat0.Wq").value.data) CHECK(std::abs(v) <= 1.0 / std::sqrt(8.0));
    ParamStore shared;
    auto cfg = tiny_config(8, 2, 3);
    cfg.shared_relations = true;
    Encoder enc2(shared, cfg);
    CHECK(shared.contains("rel.K"));
    CHECK_FALSE(shared.contains("rgat1.rK"));
}

TEST_CASE("gradcheck: full encoder at d=16, H=2, L=2") {
    ParamStore store;
    auto cfg = tiny_config(16, 2, 2);
    Encoder enc(store, cfg);
    randomize(store, 16, 0.4);
    auto g = build_graph(small_example());
    std::mt19937_64 wr(17);
    Tensor w = random_tensor(g.size() + 1, 16, wr);
    Tensor w2 = random_tensor(1, 16, wr);
    LossClosure loss = [&](Gradients* grads) {
        ad::Tape t;
        auto e = enc.encode(t, g);
        auto l = ad::add(ad::sum(ad::mul(e.Z, t.constant(w))), ad::sum(ad::mul(ad::add(e.h_t, e.h_p), t.constant(w2))));
        if (grads) t.backward(l, *grads);
        return l.scalar();
    };
    GradCheckOptions opts;
    opts.max_coords = 24;
    auto report = grad_check(store, loss, opts);
    for (const auto& e : report.entries) {
        CAPTURE(e.name);
        CHECK(e.rel_error < 1e-4);
    }
    MESSAGE("max relative error " << report.max_rel_error << " at " << report.worst);
}
