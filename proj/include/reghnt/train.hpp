#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "reghnt/model.hpp"

namespace reghnt {

// Linear warmup over the first `warmup` steps, then linear decay to zero.
struct LrSchedule {
    std::size_t total = 1;
    std::size_t warmup = 0;
    LrSchedule(std::size_t total_steps, double warmup_ratio);
    double factor(std::size_t step) const;
};

// Adam with decoupled weight decay; the embedding table and the remaining
// parameters use separate learning rates and decay rates.
class AdamW {
public:
    AdamW(const ParamStore& store, const TrainConfig& cfg);
    void step(ParamStore& store, const Gradients& grads, double lr_factor);
    std::size_t steps() const { return t_; }

private:
    TrainConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::size_t t_ = 0;
};

// Global L2 norm of all gradient buffers.
double grad_norm(const Gradients& g);

struct EvalSummary {
    ScoreReport report;
    std::vector<Prediction> predictions;
    std::size_t scored = 0;         // questions with a bound target
    double target_match = 0.0;      // exact decoded-target match over bound questions
    double scale_accuracy = 0.0;
    double op_accuracy = 0.0;
    std::size_t beam_below_greedy = 0;
};

// Predicts every question (in parallel over `threads`) and scores it.
EvalSummary evaluate(const Model& model, const std::vector<Prepared>& data, std::size_t width, bool with_greedy = false,
                     std::size_t threads = 1);

// Decoded target equals the bound gold target.
bool target_matches(const Prediction& pred, const Prepared& p, const ModelConfig& cfg);

struct EpochLog {
    std::size_t epoch = 0;
    double l_tree = 0.0, l_op = 0.0, l_scale = 0.0;
    double dev_em = 0.0, dev_f1 = 0.0;
    double target_match = 0.0, scale_accuracy = 0.0;
    double seconds = 0.0;
};

struct TrainOptions {
    // Checkpoints and the CSV log go here when non-empty.
    std::filesystem::path out_dir;
    // Beam width of the per-epoch dev evaluation; 0 uses the model default.
    std::size_t eval_width = 0;
    // Called after every epoch; returning true stops training.
    std::function<bool(const EpochLog&)> on_epoch;
    bool quiet = true;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::size_t skipped = 0;
    std::size_t best_epoch = 0;
    double best_em = -1.0;
    double best_f1 = -1.0;
    bool aborted = false;
    std::string abort_reason;
};

// Mean per-question loss parts over `data` without dropout.
struct LossSummary {
    double tree = 0.0, op = 0.0, scale = 0.0;
};
LossSummary mean_loss(const Model& model, const std::vector<Prepared>& data);

TrainResult train(Model& model, const std::vector<Prepared>& train_set, const std::vector<Prepared>& dev_set,
                  const TrainConfig& cfg, const TrainOptions& opts = {});

}  // namespace reghnt
