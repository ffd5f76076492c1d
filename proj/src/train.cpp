#include "reghnt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace reghnt {

namespace {

// Runs fn(i) for i in [0, n) split into contiguous chunks over `threads`.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    std::vector<std::thread> pool;
    std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
        pool.emplace_back([=, &fn] {
            for (std::size_t i = lo; i < hi; ++i) fn(i, t);
        });
    }
    for (auto& th : pool) th.join();
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h;
}

void write_csv_header(std::ofstream& out) { out << "epoch,L_tree,L_op,L_scale,dev_EM,dev_F1\n"; }

}  // namespace

LrSchedule::LrSchedule(std::size_t total_steps, double warmup_ratio)
    : total(std::max<std::size_t>(1, total_steps)),
      warmup(static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)))) {}

double LrSchedule::factor(std::size_t step) const {
    if (step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (total <= warmup) return 1.0;
    double rest = static_cast<double>(total - std::min(step, total)) / static_cast<double>(total - warmup);
    return std::max(0.0, rest);
}

AdamW::AdamW(const ParamStore& store, const TrainConfig& cfg) : cfg_(cfg) {
    for (std::size_t i = 0; i < store.size(); ++i) {
        const Tensor& v = store[i].value;
        m_.emplace_back(v.rows, v.cols);
        v_.emplace_back(v.rows, v.cols);
    }
}

void AdamW::step(ParamStore& store, const Gradients& grads, double lr_factor) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
        Parameter& p = store[i];
        const bool emb = p.group == ParamGroup::Embedding;
        const double lr = (emb ? cfg_.lr_embedding : cfg_.lr_other) * lr_factor;
        const double wd = emb ? cfg_.wd_embedding : cfg_.wd_other;
        const Tensor& g = grads.grads[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < p.value.data.size(); ++k) {
            double gk = g.data[k];
            // Rows of the embedding table that received no gradient keep their moments.
            if (emb && gk == 0.0 && m.data[k] == 0.0) continue;
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            double mhat = m.data[k] / c1, vhat = v.data[k] / c2;
            p.value.data[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.adam_eps) + wd * p.value.data[k]);
        }
    }
}

double grad_norm(const Gradients& g) {
    double s = 0.0;
    for (const auto& t : g.grads)
        for (double v : t.data) s += v * v;
    return std::sqrt(s);
}

bool target_matches(const Prediction& pred, const Prepared& p, const ModelConfig& cfg) {
    if (!p.gold) return false;
    const GoldTarget& gold = *p.gold;
    if (pred.record.op_class != op_class_name(gold.op_class, cfg.op_classes)) return false;
    if (cfg.tag_spans && gold.kind == TreeKind::Span) return pred.tagged == gold.ranges;
    return pred.beam && prefix_to_strings(pred.beam->tokens, gold.kind) == prefix_to_strings(gold.tokens, gold.kind);
}

EvalSummary evaluate(const Model& model, const std::vector<Prepared>& data, std::size_t width, bool with_greedy,
                     std::size_t threads) {
    EvalSummary s;
    s.predictions.resize(data.size());
    parallel_for(data.size(), threads,
                 [&](std::size_t i, std::size_t) { s.predictions[i] = model.predict(data[i], width, with_greedy); });
    std::vector<PredictionRecord> records;
    std::vector<HybridExample> golds;
    std::size_t match = 0, scale_ok = 0, op_ok = 0;
    const std::size_t classes = model.config().op_classes;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Prediction& pred = s.predictions[i];
        records.push_back(pred.record);
        golds.push_back(data[i].example);
        if (pred.beam && pred.greedy && pred.beam->logp < pred.greedy->logp) ++s.beam_below_greedy;
        if (!data[i].gold) continue;
        const GoldTarget& gold = *data[i].gold;
        ++s.scored;
        op_ok += pred.record.op_class == op_class_name(gold.op_class, classes);
        scale_ok += pred.record.scale == gold.scale;
        match += target_matches(pred, data[i], model.config());
    }
    s.report = evaluate_split(records, golds);
    if (s.scored > 0) {
        const double n = static_cast<double>(s.scored);
        s.target_match = static_cast<double>(match) / n;
        s.scale_accuracy = static_cast<double>(scale_ok) / n;
        s.op_accuracy = static_cast<double>(op_ok) / n;
    }
    return s;
}

LossSummary mean_loss(const Model& model, const std::vector<Prepared>& data) {
    LossSummary s;
    std::size_t n = 0;
    for (const auto& p : data) {
        if (!p.gold) continue;
        ad::Tape tape;
        LossParts parts = model.loss(tape, p);
        s.tree += parts.tree.scalar();
        s.op += parts.op.scalar();
        s.scale += parts.scale.scalar();
        ++n;
    }
    if (n > 0) {
        s.tree /= static_cast<double>(n);
        s.op /= static_cast<double>(n);
        s.scale /= static_cast<double>(n);
    }
    return s;
}

TrainResult train(Model& model, const std::vector<Prepared>& train_set, const std::vector<Prepared>& dev_set,
                  const TrainConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    TrainResult result;
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < train_set.size(); ++i) {
        if (train_set[i].gold) {
            usable.push_back(i);
        } else {
            ++result.skipped;
            if (!opts.quiet)
                std::cerr << "warning: skipping " << train_set[i].example.question_id << ": " << train_set[i].skip_reason
                          << '\n';
        }
    }
    if (result.skipped > 0 && !opts.quiet)
        std::cerr << "warning: " << result.skipped << " training questions without a bindable target\n";
    if (usable.empty()) throw std::invalid_argument("no training question has a bindable target");

    ParamStore& store = model.params();
    const std::size_t batches = (usable.size() + cfg.batch_size - 1) / cfg.batch_size;
    LrSchedule schedule(batches * cfg.epochs, cfg.warmup_ratio);
    AdamW opt(store, cfg);
    std::mt19937_64 shuffle_rng(cfg.seed);
    const std::size_t width = opts.eval_width ? opts.eval_width : model.config().beam;

    std::ofstream csv;
    if (!opts.out_dir.empty()) {
        std::filesystem::create_directories(opts.out_dir);
        csv.open(opts.out_dir / "log.csv");
        write_csv_header(csv);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        std::shuffle(usable.begin(), usable.end(), shuffle_rng);
        EpochLog log;
        log.epoch = epoch;
        for (std::size_t b = 0; b < batches; ++b) {
            std::size_t lo = b * cfg.batch_size, hi = std::min(usable.size(), lo + cfg.batch_size);
            std::size_t n = hi - lo;
            std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, n));
            std::vector<Gradients> local;
            for (std::size_t w = 0; w < workers; ++w) local.push_back(store.make_gradients());
            std::vector<double> tree(n), op(n), scale(n);
            parallel_for(n, workers, [&](std::size_t k, std::size_t w) {
                std::size_t idx = usable[lo + k];
                ad::Tape tape;
                tape.training = true;
                tape.rng.seed(mix(mix(cfg.seed, epoch), idx));
                LossParts parts = model.loss(tape, train_set[idx]);
                tree[k] = parts.tree.scalar();
                op[k] = parts.op.scalar();
                scale[k] = parts.scale.scalar();
                tape.backward(parts.total, local[w]);
            });
            Gradients grads = store.make_gradients();
            for (const auto& g : local) grads.add(g);
            grads.scale(1.0 / static_cast<double>(n));
            double loss_sum = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                loss_sum += tree[k] + op[k] + scale[k];
                log.l_tree += tree[k];
                log.l_op += op[k];
                log.l_scale += scale[k];
            }
            double norm = grad_norm(grads);
            if (!std::isfinite(loss_sum) || !std::isfinite(norm)) {
                result.aborted = true;
                result.abort_reason = "non-finite loss in epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
                if (!opts.out_dir.empty()) model.save(opts.out_dir / "last_good.ckpt");
                return result;
            }
            if (cfg.clip_norm > 0 && norm > cfg.clip_norm) grads.scale(cfg.clip_norm / norm);
            opt.step(store, grads, schedule.factor(opt.steps()));
        }
        const double total = static_cast<double>(usable.size());
        log.l_tree /= total;
        log.l_op /= total;
        log.l_scale /= total;
        if (!dev_set.empty()) {
            EvalSummary ev = evaluate(model, dev_set, width, false, cfg.threads);
            log.dev_em = ev.report.overall.em();
            log.dev_f1 = ev.report.overall.f1();
            log.target_match = ev.target_match;
            log.scale_accuracy = ev.scale_accuracy;
        }
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.epochs.push_back(log);
        bool better = dev_set.empty() || log.dev_em > result.best_em || (log.dev_em == result.best_em && log.dev_f1 > result.best_f1);
        if (better) {
            result.best_em = log.dev_em;
            result.best_f1 = log.dev_f1;
            result.best_epoch = epoch;
        }
        if (!opts.out_dir.empty()) {
            csv << log.epoch << ',' << log.l_tree << ',' << log.l_op << ',' << log.l_scale << ',' << log.dev_em << ','
                << log.dev_f1 << '\n';
            csv.flush();
            model.save(opts.out_dir / "last_good.ckpt");
            if (better) model.save(opts.out_dir / "best.ckpt");
        }
        if (!opts.quiet) {
            std::fprintf(stderr, "epoch %zu  L_tree %.4f  L_op %.4f  L_scale %.4f  dev EM %.4f  F1 %.4f  (%.1fs)\n", epoch,
                         log.l_tree, log.l_op, log.l_scale, log.dev_em, log.dev_f1, log.seconds);
        }
        if (opts.on_epoch && opts.on_epoch(log)) break;
    }
    return result;
}

}  // namespace reghnt
