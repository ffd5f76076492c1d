#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>

#include "reghnt/synthetic.hpp"
#include "reghnt/train.hpp"

namespace fs = std::filesystem;
using namespace reghnt;

namespace {

struct Options {
    std::string manifest = "reghnt-manifest.json";
    std::size_t threads = 1;
    bool no_intra = false, no_inter = false, no_type_pooling = false;
    std::string tag_decoder = "off";
};

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string resolve(const std::string& p) {
    if (p == "-") return p;
    fs::path path(p);
    if (path.is_relative() && !fs::exists(path)) {
        if (const char* dir = std::getenv("REGHNT_DATA_DIR")) {
            fs::path alt = fs::path(dir) / path;
            if (fs::exists(alt)) return alt.string();
        }
    }
    return path.string();
}

std::string read_input(const std::string& p) {
    std::stringstream ss;
    if (p == "-") {
        ss << std::cin.rdbuf();
        return ss.str();
    }
    std::ifstream in(resolve(p), std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p);
    ss << in.rdbuf();
    return ss.str();
}

void write_output(const std::string& p, const std::string& text) {
    if (p == "-") {
        std::cout << text;
        std::cout.flush();
        return;
    }
    fs::path path(p);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + p);
    out << text;
}

std::vector<HybridExample> parse_examples(const std::string& text, bool require_gold) {
    auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '[') {
        LoadOptions opts;
        opts.require_gold = require_gold;
        return parse_dataset(text, opts);
    }
    return parse_jsonl(text);
}

struct Manifest {
    std::string subcommand;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json inputs = nlohmann::json::object();
    std::uint64_t seed = 0;

    void input(const std::string& name, const std::string& text) { inputs[name] = fnv1a_hex(text); }

    nlohmann::json to_json(const std::vector<std::string>& argv) const {
        nlohmann::json core{{"subcommand", subcommand}, {"config", config}, {"inputs", inputs}, {"seed", seed}};
        return {{"tool", "reghnt"},
                {"version", REGHNT_VERSION},
                {"compiler", __VERSION__},
                {"json_library", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                     std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                     std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                {"argv", argv},
                {"subcommand", subcommand},
                {"config", config},
                {"config_hash", config_hash(config)},
                {"inputs", inputs},
                {"seed", seed},
                {"run_hash", config_hash(core)}};
    }
};

ModelConfig apply_flags(ModelConfig c, const Options& o) {
    if (o.no_intra) c.intra = false;
    if (o.no_inter) c.inter = false;
    if (o.no_type_pooling) c.type_pooling = false;
    c.tag_spans = o.tag_decoder == "span";
    return c;
}

const HybridExample& pick_question(const std::vector<HybridExample>& qs, const std::string& id) {
    if (qs.empty()) throw std::runtime_error("input holds no questions");
    if (id.empty()) return qs.front();
    for (const auto& q : qs)
        if (q.question_id == id) return q;
    throw std::runtime_error("question " + id + " not found");
}

// Subcommand handlers; each returns the exit status.

int run_ingest(const std::string& input, const std::string& output, bool stats, Manifest& m) {
    std::string text = read_input(input);
    m.input("input", text);
    auto examples = parse_examples(text, false);
    write_output(output, to_jsonl(examples));
    if (stats) {
        auto s = split_stats(examples);
        std::cerr << "contexts " << s.contexts << ", questions " << s.questions << '\n';
        for (int t = 0; t < kNumAnswerTypes; ++t) {
            std::cerr << to_string(static_cast<AnswerType>(t));
            for (int f = 0; f < kNumAnswerFroms; ++f) std::cerr << ' ' << s.grid[t][f];
            std::cerr << '\n';
        }
    }
    return 0;
}

int run_graph(const std::string& input, const std::string& question, const std::string& output, const Options& o,
              Manifest& m) {
    std::string text = read_input(input);
    m.input("input", text);
    ModelConfig cfg = apply_flags({}, o);
    m.config = {{"intra", cfg.intra}, {"inter", cfg.inter}, {"question", question}};
    auto qs = parse_examples(text, false);
    HeteroGraph g = build_graph(pick_question(qs, question), cfg.graph_options());
    write_output(output, graph_to_json(g).dump(2) + "\n");
    return 0;
}

int run_parse_deriv(const std::string& derivation, const std::string& input, const std::string& question, Manifest& m) {
    NumberIndex index;
    if (!input.empty()) {
        std::string text = read_input(input);
        m.input("input", text);
        index = extract_numbers(pick_question(parse_examples(text, false), question));
    }
    m.config = {{"derivation", derivation}};
    ExprTree tree = parse_infix(derivation, index);
    std::cout << prefix_to_string(to_prefix(tree), TreeKind::Arithmetic) << '\n';
    return 0;
}

int run_eval_expr(const std::string& expr, const std::string& kind, const std::string& input,
                  const std::string& question, Manifest& m) {
    m.config = {{"expression", expr}, {"kind", kind}};
    if (kind == "arithmetic") {
        ExprTree tree = from_prefix(parse_prefix(expr, TreeKind::Arithmetic), TreeKind::Arithmetic);
        std::cout << format_number(eval_arith(tree)) << '\n';
        return 0;
    }
    if (input.empty()) throw UsageError("span expressions need --input with the context");
    std::string text = read_input(input);
    m.input("input", text);
    HeteroGraph g = build_graph(pick_question(parse_examples(text, false), question));
    SpanResult r = eval_span(from_prefix(parse_prefix(expr, TreeKind::Span), TreeKind::Span), g);
    if (const int* n = std::get_if<int>(&r)) {
        std::cout << *n << '\n';
    } else {
        std::cout << nlohmann::json(std::get<std::vector<std::string>>(r)).dump() << '\n';
    }
    return 0;
}

struct GradcheckArgs {
    std::size_t d = 16, heads = 2, layers = 2, vocab = 211, questions = 2, coords = 32;
    double eps = 1e-4, tol = 1e-4;
    std::uint64_t seed = 7;
    std::string input;
    bool verbose = false;
};

int run_gradcheck(const GradcheckArgs& a, const Options& o, Manifest& m) {
    ModelConfig cfg = apply_flags({}, o);
    cfg.d = a.d;
    cfg.heads = a.heads;
    cfg.layers = a.layers;
    cfg.vocab = a.vocab;
    cfg.init_seed = a.seed;
    cfg.validate();
    std::vector<HybridExample> qs;
    if (a.input.empty()) {
        qs = synthetic_corpus(6, a.seed);
    } else {
        std::string text = read_input(a.input);
        m.input("input", text);
        qs = parse_examples(text, true);
    }
    auto data = prepare_all(qs, cfg);
    std::vector<Prepared> used;
    for (auto& p : data)
        if (p.gold && used.size() < a.questions) used.push_back(std::move(p));
    if (used.empty()) throw std::runtime_error("no question with a bindable target");
    Model model(cfg);
    model.init();
    // Nonzero biases so every parameter carries gradient.
    std::mt19937_64 rng(a.seed);
    for (std::size_t i = 0; i < model.params().size(); ++i) {
        Parameter& p = model.params()[i];
        bool bias = p.name.compare(p.name.rfind('.') + 1, 1, "b") == 0;
        if (bias && p.value.rows == 1) ParamStore::init_uniform(p, 0.1, rng);
    }
    GradCheckOptions opts;
    opts.epsilon = a.eps;
    opts.max_coords = a.coords;
    opts.seed = a.seed;
    m.config = {{"model", to_json(cfg)}, {"questions", used.size()}, {"epsilon", a.eps}, {"coords", a.coords}, {"tol", a.tol}};
    m.seed = a.seed;
    auto report = grad_check_model(model, used, opts);
    if (a.verbose) {
        for (const auto& e : report.entries)
            std::printf("%-40s coords %4zu  |a| %.3e  |n| %.3e  rel %.3e\n", e.name.c_str(), e.coords, e.analytic_norm,
                        e.numeric_norm, e.rel_error);
    }
    bool ok = report.passed(a.tol);
    std::printf("%s max relative error %.3e (worst %s, %zu tensors, tolerance %.0e)\n", ok ? "PASS" : "FAIL",
                report.max_rel_error, report.worst.c_str(), report.entries.size(), a.tol);
    return ok ? 0 : 1;
}

struct TrainArgs {
    std::string train, dev, out, config;
    std::size_t synthetic = 0;
    std::optional<std::size_t> d, heads, layers, epochs, batch_size, beam, op_classes, eval_width;
    std::optional<double> lr, lr_embedding;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

int run_train(const TrainArgs& a, const Options& o, Manifest& m) {
    ModelConfig mc;
    TrainConfig tc;
    if (!a.config.empty()) {
        std::string text = read_input(a.config);
        m.input("config", text);
        auto j = nlohmann::json::parse(text);
        if (j.contains("model")) mc = model_config_from_json(j.at("model"), mc);
        if (j.contains("train")) tc = train_config_from_json(j.at("train"), tc);
    }
    mc = apply_flags(mc, o);
    if (a.d) mc.d = *a.d;
    if (a.heads) mc.heads = *a.heads;
    if (a.layers) mc.layers = *a.layers;
    if (a.beam) mc.beam = *a.beam;
    if (a.op_classes) mc.op_classes = *a.op_classes;
    if (a.epochs) tc.epochs = *a.epochs;
    if (a.batch_size) tc.batch_size = *a.batch_size;
    if (a.lr) tc.lr_other = *a.lr;
    if (a.lr_embedding) tc.lr_embedding = *a.lr_embedding;
    if (a.seed) {
        tc.seed = *a.seed;
        mc.init_seed = *a.seed;
    }
    tc.threads = o.threads;
    mc.validate();
    tc.validate();

    std::vector<HybridExample> train_q, dev_q;
    if (a.synthetic > 0) {
        train_q = synthetic_corpus(a.synthetic, tc.seed);
        dev_q = train_q;
        write_output((fs::path(a.out) / "train.jsonl").string(), to_jsonl(train_q));
    } else {
        if (a.train.empty()) throw UsageError("train needs --train or --synthetic");
        std::string text = read_input(a.train);
        m.input("train", text);
        train_q = parse_examples(text, true);
        if (!a.dev.empty()) {
            std::string dev = read_input(a.dev);
            m.input("dev", dev);
            dev_q = parse_examples(dev, true);
        }
    }
    m.config = {{"model", to_json(mc)}, {"train", to_json(tc)}, {"synthetic", a.synthetic}};
    m.seed = tc.seed;
    fs::create_directories(a.out);
    write_output((fs::path(a.out) / "config.json").string(), nlohmann::json{{"model", to_json(mc)}, {"train", to_json(tc)}}.dump(2) + "\n");

    auto train_set = prepare_all(train_q, mc);
    auto dev_set = prepare_all(dev_q, mc);
    Model model(mc);
    model.init();
    TrainOptions opts;
    opts.out_dir = a.out;
    opts.quiet = a.quiet;
    if (a.eval_width) opts.eval_width = *a.eval_width;
    TrainResult r = train(model, train_set, dev_set, tc, opts);
    nlohmann::json summary{{"epochs", r.epochs.size()},
                           {"best_epoch", r.best_epoch},
                           {"best_em", r.best_em},
                           {"best_f1", r.best_f1},
                           {"skipped", r.skipped},
                           {"aborted", r.aborted}};
    if (!r.epochs.empty()) {
        summary["final"] = {{"L_tree", r.epochs.back().l_tree},
                            {"L_op", r.epochs.back().l_op},
                            {"L_scale", r.epochs.back().l_scale},
                            {"target_match", r.epochs.back().target_match},
                            {"scale_accuracy", r.epochs.back().scale_accuracy}};
    }
    std::cout << summary.dump(2) << '\n';
    if (r.aborted) {
        std::cerr << nlohmann::json{{"error", "NonFiniteLoss"}, {"message", r.abort_reason}}.dump() << '\n';
        return 1;
    }
    return 0;
}

int run_predict(const std::string& model_path, const std::string& input, const std::string& output, std::size_t beam,
                bool greedy, const Options& o, Manifest& m) {
    auto model = Model::load(resolve(model_path));
    std::ifstream ck(resolve(model_path), std::ios::binary);
    m.input("model", std::string(std::istreambuf_iterator<char>(ck), {}));
    std::string text = read_input(input);
    m.input("input", text);
    std::size_t width = greedy ? 1 : (beam ? beam : model->config().beam);
    m.config = {{"model", to_json(model->config())}, {"beam", width}};
    auto data = prepare_all(parse_examples(text, false), model->config());
    EvalSummary ev = evaluate(*model, data, width, false, o.threads);
    std::string out;
    for (const auto& p : ev.predictions) out += to_json(p.record).dump() + "\n";
    write_output(output, out);
    return 0;
}

int run_score(const std::string& pred, const std::string& gold, bool json, Manifest& m) {
    std::string ptext = read_input(pred), gtext = read_input(gold);
    m.input("pred", ptext);
    m.input("gold", gtext);
    auto report = evaluate_split(parse_predictions_jsonl(ptext), parse_examples(gtext, true));
    if (json) {
        std::cout << report.to_json().dump(2) << '\n';
    } else {
        std::cout << report.to_table();
    }
    return 0;
}

void error_json(const std::string& kind, const std::string& message) {
    std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph-to-tree question answering over tables and text"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--manifest", o.manifest, "Where the run manifest is written")->capture_default_str();
    app.add_option("--threads", o.threads, "Worker threads for batch-parallel stages")->check(CLI::PositiveNumber);
    app.add_flag("--no-intra", o.no_intra, "Drop relations within one source");
    app.add_flag("--no-inter", o.no_inter, "Drop relations across sources");
    app.add_flag("--no-type-pooling", o.no_type_pooling, "Mean pooling instead of type-aware pooling");
    app.add_option("--tag-decoder", o.tag_decoder, "Span questions by node tagging (span) or by the tree decoder (off)")
        ->check(CLI::IsMember({"off", "span"}));

    std::string input, output = "-", question;
    bool stats = false;
    auto* ingest = app.add_subcommand("ingest", "Validate a dataset file and write canonical JSONL");
    ingest->add_option("-i,--input", input, "Dataset JSON or JSONL (- for stdin)")->required();
    ingest->add_option("-o,--output", output, "JSONL output (- for stdout)");
    ingest->add_flag("--stats", stats, "Print answer-type counts to stderr");

    auto* graph = app.add_subcommand("graph", "Build the heterogeneous graph of one question");
    graph->add_option("-i,--input", input)->required();
    graph->add_option("-q,--question", question, "Question id (default: first)");
    graph->add_option("-o,--output", output);

    std::string derivation;
    auto* parse = app.add_subcommand("parse-deriv", "Convert an infix derivation to prefix form");
    parse->add_option("derivation", derivation)->required();
    parse->add_option("-i,--input", input, "Context used to bind numbers");
    parse->add_option("-q,--question", question);

    std::string expr, kind = "arithmetic";
    auto* eval = app.add_subcommand("eval-expr", "Evaluate a prefix expression");
    eval->add_option("expression", expr)->required();
    eval->add_option("--kind", kind)->check(CLI::IsMember({"arithmetic", "span"}));
    eval->add_option("-i,--input", input, "Context for span expressions");
    eval->add_option("-q,--question", question);

    GradcheckArgs ga;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model gradient");
    gc->add_option("--d", ga.d);
    gc->add_option("--heads", ga.heads);
    gc->add_option("--layers", ga.layers);
    gc->add_option("--vocab", ga.vocab);
    gc->add_option("--questions", ga.questions);
    gc->add_option("--coords", ga.coords, "Sampled coordinates per tensor");
    gc->add_option("--eps", ga.eps);
    gc->add_option("--tol", ga.tol);
    gc->add_option("--seed", ga.seed);
    gc->add_option("-i,--input", ga.input, "Labeled questions (default: synthetic)");
    gc->add_flag("-v,--verbose", ga.verbose);

    TrainArgs ta;
    auto* tr = app.add_subcommand("train", "Train a model and save checkpoints");
    tr->add_option("--train", ta.train, "Training data");
    tr->add_option("--dev", ta.dev, "Development data");
    tr->add_option("--synthetic", ta.synthetic, "Train on N generated questions instead");
    tr->add_option("--out", ta.out, "Output directory")->required();
    tr->add_option("--config", ta.config, "JSON with model and train sections");
    tr->add_option("--d", ta.d);
    tr->add_option("--heads", ta.heads);
    tr->add_option("--layers", ta.layers);
    tr->add_option("--epochs", ta.epochs);
    tr->add_option("--batch-size", ta.batch_size);
    tr->add_option("--lr", ta.lr, "Learning rate of non-embedding parameters");
    tr->add_option("--lr-embedding", ta.lr_embedding);
    tr->add_option("--beam", ta.beam);
    tr->add_option("--op-classes", ta.op_classes)->check(CLI::IsMember({2, 4}));
    tr->add_option("--eval-width", ta.eval_width, "Beam width of per-epoch evaluation");
    tr->add_option("--seed", ta.seed);
    tr->add_flag("--quiet", ta.quiet);

    std::string model_path;
    std::size_t beam = 0;
    bool greedy = false;
    auto* pr = app.add_subcommand("predict", "Predict answers with a trained checkpoint");
    pr->add_option("--model", model_path)->required();
    pr->add_option("-i,--input", input)->required();
    pr->add_option("-o,--output", output);
    pr->add_option("--beam", beam, "Beam width (default: from the checkpoint)");
    pr->add_flag("--greedy", greedy);

    std::string pred, gold;
    bool as_json = false;
    auto* sc = app.add_subcommand("score", "Exact match and numeracy F1 of predictions");
    sc->add_option("--pred", pred)->required();
    sc->add_option("--gold", gold)->required();
    sc->add_flag("--json", as_json);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    Manifest m;
    m.subcommand = app.get_subcommands().front()->get_name();
    std::vector<std::string> args(argv, argv + argc);
    int status = 1;
    try {
        if (m.subcommand == "ingest") status = run_ingest(input, output, stats, m);
        else if (m.subcommand == "graph") status = run_graph(input, question, output, o, m);
        else if (m.subcommand == "parse-deriv") status = run_parse_deriv(derivation, input, question, m);
        else if (m.subcommand == "eval-expr") status = run_eval_expr(expr, kind, input, question, m);
        else if (m.subcommand == "gradcheck") status = run_gradcheck(ga, o, m);
        else if (m.subcommand == "train") status = run_train(ta, o, m);
        else if (m.subcommand == "predict") status = run_predict(model_path, input, output, beam, greedy, o, m);
        else if (m.subcommand == "score") status = run_score(pred, gold, as_json, m);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        error_json("ParseError", e.what());
    } catch (const SchemaError& e) {
        error_json("SchemaError", e.what());
    } catch (const StructureError& e) {
        error_json("StructureError", e.what());
    } catch (const EvalError& e) {
        error_json("EvalError", e.what());
    } catch (const std::exception& e) {
        error_json("Error", e.what());
    }
    try {
        nlohmann::json manifest = m.to_json(args);
        manifest["exit_status"] = status;
        std::string text = manifest.dump(2) + "\n";
        write_output(o.manifest, text);
        if (m.subcommand == "train" && !ta.out.empty() && fs::exists(ta.out))
            write_output((fs::path(ta.out) / "manifest.json").string(), text);
    } catch (const std::exception& e) {
        error_json("ManifestError", e.what());
        if (status == 0) status = 1;
    }
    return status;
}
