#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cncd/core/autodiff.hpp"

namespace cncd {

struct GradCheckReport {
    std::string parameter;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
};

struct NamedParam {
    std::string name;
    Matrix value;
};

/// Builds a scalar loss on `tape` from one Var per parameter (same order).
using LossBuilder = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

namespace detail {
inline double evaluate_loss(const LossBuilder& fn, const std::vector<NamedParam>& params) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.constant(p.value));
    return fn(tape, vars).scalar();
}
}  // namespace detail

/// Central-difference check of every scalar entry of every parameter.
inline std::vector<GradCheckReport> grad_check(const LossBuilder& fn, std::vector<NamedParam> params,
                                               double h = 1e-5) {
    if (!(h > 0.0)) throw ParameterError("grad_check: h must be > 0");
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& p : params) vars.push_back(tape.param(p.value));
    ad::Var loss = fn(tape, vars);
    tape.backward(loss);

    std::vector<GradCheckReport> out;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const Matrix analytic = tape.grad(vars[pi]);
        Matrix& value = params[pi].value;
        for (std::size_t r = 0; r < value.rows(); ++r)
            for (std::size_t c = 0; c < value.cols(); ++c) {
                const double orig = value(r, c);
                value(r, c) = orig + h;
                const double fp = detail::evaluate_loss(fn, params);
                value(r, c) = orig - h;
                const double fm = detail::evaluate_loss(fn, params);
                value(r, c) = orig;
                GradCheckReport rep;
                rep.parameter = params[pi].name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
                rep.analytic = analytic(r, c);
                rep.numeric = (fp - fm) / (2.0 * h);
                rep.relative_error = relative_error(rep.analytic, rep.numeric);
                out.push_back(std::move(rep));
            }
    }
    return out;
}

inline double max_relative_error(const std::vector<GradCheckReport>& reports) {
    double worst = 0.0;
    for (const auto& r : reports) worst = std::max(worst, r.relative_error);
    return worst;
}

}  // namespace cncd
