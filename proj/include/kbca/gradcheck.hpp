#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "kbca/tape.hpp"

namespace kbca {

/// A scalar computation to be gradient-checked: builds a fresh tape from
/// the current contents of the checked parameter tensors and returns the
/// loss node plus the leaf Vars bound to those tensors (same order).
struct GradCheckProblem {
    Var loss;
    std::vector<Var> param_vars;
};

/// Compares reverse-accumulated gradients against central finite
/// differences and returns the maximum relative error over all entries
/// of all checked parameters.
///
/// params point at the storage the build function reads, so perturbing
/// them in place and rebuilding re-evaluates the loss at the shifted point.
inline double check_gradient(
    const std::function<GradCheckProblem(Tape&)>& build,
    const std::vector<Tensor*>& params,
    double h = 1e-5) {
    std::vector<Tensor> analytic;
    {
        Tape tape;
        GradCheckProblem p = build(tape);
        if (p.param_vars.size() != params.size())
            throw ConfigError("check_gradient: param count mismatch");
        tape.backward(p.loss);
        for (Var v : p.param_vars) analytic.push_back(tape.grad(v));
    }

    auto eval = [&]() {
        Tape tape;
        GradCheckProblem p = build(tape);
        double v = tape.value(p.loss)[0];
        if (!std::isfinite(v)) throw NumericError("check_gradient: non-finite loss");
        return v;
    };

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& par = *params[pi];
        for (std::size_t i = 0; i < par.numel(); ++i) {
            double orig = par[i];
            par[i] = orig + h;
            double fp = eval();
            par[i] = orig - h;
            double fm = eval();
            par[i] = orig;
            double numeric = (fp - fm) / (2.0 * h);
            double a = analytic[pi][i];
            double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
            max_rel = std::max(max_rel, std::abs(a - numeric) / scale);
        }
    }
    return max_rel;
}

} // namespace kbca
