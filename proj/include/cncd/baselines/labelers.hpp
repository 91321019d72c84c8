#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd {

struct TransportPlan {
    Matrix plan;  // P × K
    double epsilon = 0.05;
    std::size_t iterations = 0;
    bool converged = false;
    /// Largest deviation of any row or column sum from its target.
    double marginal_error = 0.0;
};

struct SinkhornResult {
    TransportPlan transport;
    std::vector<int> labels;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

}  // namespace detail

/// Entropic OT between uniform masses on points (1/P) and prototypes (1/K) with
/// cost 1 - cos. Scaling runs in the log domain so small epsilons do not underflow.
inline TransportPlan sinkhorn_plan(const Matrix& cost, double epsilon, std::size_t max_iters = 1000,
                                   double tolerance = 1e-6) {
    if (!(epsilon > 0.0)) throw ParameterError("sinkhorn: epsilon must be > 0");
    const std::size_t P = cost.rows();
    const std::size_t K = cost.cols();
    if (P == 0 || K == 0) throw UsageError("sinkhorn: empty cost matrix");
    const double log_r = -std::log(static_cast<double>(P));
    const double log_c = -std::log(static_cast<double>(K));

    Matrix log_kernel(P, K);
    for (std::size_t i = 0; i < cost.size(); ++i) log_kernel.data()[i] = -cost.data()[i] / epsilon;
    Vector f(P, 0.0), g(K, 0.0);
    std::vector<double> buf(std::max(P, K));

    TransportPlan out;
    out.epsilon = epsilon;
    auto materialize = [&] {
        out.plan = Matrix(P, K);
        for (std::size_t i = 0; i < P; ++i)
            for (std::size_t j = 0; j < K; ++j) out.plan(i, j) = std::exp(f[i] + log_kernel(i, j) + g[j]);
        double err = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < K; ++j) s += out.plan(i, j);
            err = std::max(err, std::abs(s - 1.0 / static_cast<double>(P)));
        }
        for (std::size_t j = 0; j < K; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < P; ++i) s += out.plan(i, j);
            err = std::max(err, std::abs(s - 1.0 / static_cast<double>(K)));
        }
        out.marginal_error = err;
    };

    for (std::size_t it = 0; it < max_iters; ++it) {
        for (std::size_t i = 0; i < P; ++i) {
            for (std::size_t j = 0; j < K; ++j) buf[j] = log_kernel(i, j) + g[j];
            f[i] = log_r - detail::log_sum_exp(std::span<const double>(buf.data(), K));
        }
        for (std::size_t j = 0; j < K; ++j) {
            for (std::size_t i = 0; i < P; ++i) buf[i] = log_kernel(i, j) + f[i];
            g[j] = log_c - detail::log_sum_exp(std::span<const double>(buf.data(), P));
        }
        out.iterations = it + 1;
        // Columns are exact after the column update; test the rows cheaply first.
        double row_err = 0.0;
        for (std::size_t i = 0; i < P; ++i) {
            for (std::size_t j = 0; j < K; ++j) buf[j] = log_kernel(i, j) + g[j];
            const double s = std::exp(f[i] + detail::log_sum_exp(std::span<const double>(buf.data(), K)));
            row_err = std::max(row_err, std::abs(s - 1.0 / static_cast<double>(P)));
        }
        if (row_err < tolerance) {
            materialize();
            out.converged = out.marginal_error < tolerance;
            if (out.converged) return out;
        }
    }
    materialize();
    out.converged = out.marginal_error < tolerance;
    return out;
}

/// Equipartition pseudo-labels: label = argmax over the plan row.
inline SinkhornResult sinkhorn_labels(const Matrix& z, const Matrix& prototypes, double epsilon = 0.05,
                                      std::size_t max_iters = 1000) {
    Matrix cost = cosine_matrix(z, prototypes);
    for (double& v : cost.data()) v = 1.0 - v;
    SinkhornResult res{sinkhorn_plan(cost, epsilon, max_iters), {}};
    res.labels.resize(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) res.labels[i] = static_cast<int>(argmax(res.transport.plan.row(i)));
    return res;
}

/// argmax cosine similarity per row; smallest index wins ties.
inline std::vector<int> nearest_prototype_labels(const Matrix& z, const Matrix& prototypes) {
    const Matrix sims = cosine_matrix(z, prototypes);
    std::vector<int> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) out[i] = static_cast<int>(argmax(sims.row(i)));
    return out;
}

}  // namespace cncd
