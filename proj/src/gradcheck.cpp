#include "reghnt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace reghnt {

namespace {

std::vector<std::size_t> choose_coords(const Tensor& analytic, std::size_t max_coords, std::mt19937_64& rng) {
    std::vector<std::size_t> all(analytic.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (all.size() <= max_coords) return all;
    // Half from coordinates with a non-zero analytic gradient, the rest uniform.
    std::vector<std::size_t> nonzero;
    for (std::size_t i : all) {
        if (analytic.data[i] != 0.0) nonzero.push_back(i);
    }
    std::shuffle(nonzero.begin(), nonzero.end(), rng);
    std::vector<std::size_t> out(nonzero.begin(), nonzero.begin() + std::min(nonzero.size(), max_coords / 2));
    std::shuffle(all.begin(), all.end(), rng);
    for (std::size_t i : all) {
        if (out.size() >= max_coords) break;
        if (std::find(out.begin(), out.end(), i) == out.end()) out.push_back(i);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

GradCheckReport grad_check(ParamStore& params, const LossClosure& loss, const GradCheckOptions& opts) {
    Gradients grads = params.make_gradients();
    loss(&grads);
    std::mt19937_64 rng(opts.seed);
    GradCheckReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Parameter& param = params[p];
        const Tensor& analytic = grads.grads[p];
        GradCheckEntry entry;
        entry.name = param.name;
        double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
        for (std::size_t i : choose_coords(analytic, opts.max_coords, rng)) {
            double saved = param.value.data[i];
            param.value.data[i] = saved + opts.epsilon;
            double up = loss(nullptr);
            param.value.data[i] = saved - opts.epsilon;
            double down = loss(nullptr);
            param.value.data[i] = saved;
            double numeric = (up - down) / (2.0 * opts.epsilon);
            double a = analytic.data[i];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
            ++entry.coords;
        }
        entry.analytic_norm = std::sqrt(a2);
        entry.numeric_norm = std::sqrt(n2);
        double denom = std::max(entry.analytic_norm, entry.numeric_norm);
        entry.rel_error = denom < 1e-9 ? 0.0 : std::sqrt(diff2) / denom;
        if (entry.rel_error > report.max_rel_error || report.worst.empty()) {
            if (entry.rel_error >= report.max_rel_error) {
                report.max_rel_error = entry.rel_error;
                report.worst = entry.name;
            }
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace reghnt
