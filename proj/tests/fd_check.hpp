#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "t2m/tensor.hpp"

// Central finite-difference gradient check. `make_loss` must rebuild the same
// scalar loss from the current values of `inputs` (deterministically).
// Returns the worst relative error across all checked elements.
inline double fd_max_rel_error(const std::function<t2m::ad::Tensor(t2m::ad::Tape&)>& make_loss,
                               const std::vector<t2m::ad::Tensor>& inputs, double step = 1e-5) {
    using namespace t2m::ad;
    for (const Tensor& in : inputs) {
        in->requires_grad = true;
        in->grad.clear();
    }
    {
        Tape tape;
        Tensor loss = make_loss(tape);
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    for (const Tensor& in : inputs) {
        in->ensure_grad();
        analytic.push_back(in->grad);
    }

    auto eval = [&] {
        Tape tape;
        return make_loss(tape)->scalar();
    };

    // Scale floor: near-zero entries of a tensor whose other gradients are
    // O(gmax) are compared against that scale, not against themselves, so FD
    // roundoff on negligible components cannot dominate the check.
    double gmax = 0.0;
    for (const auto& g : analytic)
        for (double v : g) gmax = std::max(gmax, std::abs(v));

    double worst = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        Tensor in = inputs[t];
        for (size_t i = 0; i < in->values.size(); ++i) {
            const double saved = in->values[i];
            in->values[i] = saved + step;
            const double lp = eval();
            in->values[i] = saved - step;
            const double lm = eval();
            in->values[i] = saved;
            const double fd = (lp - lm) / (2.0 * step);
            const double g = analytic[t][i];
            const double denom =
                std::max({std::abs(fd) + std::abs(g), 1e-3 * gmax, 1e-8});
            worst = std::max(worst, std::abs(fd - g) / denom);
        }
    }
    return worst;
}
