#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd {

/// AdamW state for one parameter group.
struct OptimState {
    std::size_t step = 0;
    std::vector<Matrix> first_moment;
    std::vector<Matrix> second_moment;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline OptimState make_optim_state(std::span<const Matrix> params, double lr, double weight_decay = 0.0) {
    OptimState s;
    s.learning_rate = lr;
    s.weight_decay = weight_decay;
    for (const Matrix& p : params) {
        s.first_moment.emplace_back(p.rows(), p.cols());
        s.second_moment.emplace_back(p.rows(), p.cols());
    }
    return s;
}

/// One Adam step with decoupled weight decay (p -= lr·wd·p before the Adam move).
inline void optim_step(std::span<Matrix> params, std::span<const Matrix> grads, OptimState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw UsageError("optim_step: parameter/gradient/state count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!params[i].same_shape(grads[i]) || !params[i].same_shape(state.first_moment[i]))
            throw UsageError("optim_step: shape mismatch for parameter " + std::to_string(i));

    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(state.beta1, t);
    const double bc2 = 1.0 - std::pow(state.beta2, t);
    const double lr = state.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data();
        const auto& g = grads[i].data();
        auto& m = state.first_moment[i].data();
        auto& v = state.second_moment[i].data();
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= lr * state.weight_decay * p[k];
            p[k] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

/// Step decay: initial·factor^(epoch / every), floored.
struct LrSchedule {
    double initial = 1e-3;
    double floor = 1e-5;
    std::size_t every = 5;
    double factor = 0.7;

    double at(std::size_t epoch) const {
        if (every == 0) return initial;
        const double lr = initial * std::pow(factor, static_cast<double>(epoch / every));
        return std::max(lr, floor);
    }
};

}  // namespace cncd
