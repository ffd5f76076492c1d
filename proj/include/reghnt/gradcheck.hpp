#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "reghnt/tensor.hpp"

namespace reghnt {

// Evaluates the loss for the current parameter values. When `grads` is
// non-null the closure must also accumulate analytic gradients into it.
using LossClosure = std::function<double(Gradients* grads)>;

struct GradCheckOptions {
    double epsilon = 1e-4;
    // Coordinates compared per tensor; tensors at or below this size are checked exhaustively.
    std::size_t max_coords = 64;
    unsigned long long seed = 0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t coords = 0;
    double analytic_norm = 0.0;
    double numeric_norm = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    std::string worst;
    bool passed(double tol) const { return max_rel_error <= tol; }
};

// Central differences per parameter tensor. Relative error is
// ||a - n|| / max(||a||, ||n||), taken as 0 when both norms are below 1e-9.
GradCheckReport grad_check(ParamStore& params, const LossClosure& loss, const GradCheckOptions& opts = {});

}  // namespace reghnt
