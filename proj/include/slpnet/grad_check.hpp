#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "slpnet/autodiff.hpp"
#include "slpnet/ops.hpp"

namespace slpnet {

/// Result of one finite-difference sweep. rel err is |a-n|/max(|a|,|n|,1e-8).
struct GradCheckReport {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    std::string worst; // "input 1, element 17: analytic=..., numeric=..."
};

/// Compare reverse-mode gradients of a scalar-valued closure against central
/// finite differences, sweeping every element of every input. Run in
/// 64-bit; float step sizes drown the signal.
///
/// `make_loss` is called as make_loss(tape_or_null, inputs) and must return
/// a (1,1,1,1) Var. Inputs must have requires_grad set.
template <typename F>
GradCheckReport grad_check(F make_loss, std::vector<Var<double>> &inputs,
                           double step = 1e-5) {
    for (auto &v : inputs) v.zero_grad();
    Tape<double> tape;
    Var<double> loss = make_loss(&tape, inputs);
    tape.backward(loss);

    std::vector<Tensor4<double>> analytic;
    analytic.reserve(inputs.size());
    for (auto &v : inputs) analytic.push_back(v.grad());

    GradCheckReport rep;
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        Tensor4<double> &val = inputs[vi].value();
        for (int64_t e = 0; e < val.size(); ++e) {
            const double saved = val.data[e];
            val.data[e] = saved + step;
            const double fp = make_loss(nullptr, inputs).value().data[0];
            val.data[e] = saved - step;
            const double fm = make_loss(nullptr, inputs).value().data[0];
            val.data[e] = saved;

            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[vi].data[e];
            const double rel = std::abs(a - numeric) /
                               std::max({std::abs(a), std::abs(numeric), 1e-8});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "input " + std::to_string(vi) + ", element " +
                            std::to_string(e) + ": analytic=" + std::to_string(a) +
                            ", numeric=" + std::to_string(numeric);
            }
        }
    }
    return rep;
}

} // namespace slpnet
