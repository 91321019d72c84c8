#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cncd/core/autodiff.hpp"
#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd {

/// M base-class prototypes (rows) and the update counter t.
struct PrototypeSet {
    Matrix prototypes;
    std::size_t iteration = 0;

    std::size_t count() const { return prototypes.rows(); }
    friend bool operator==(const PrototypeSet&, const PrototypeSet&) = default;
};

/// P×M matrix of normalized similarity weights; rows sum to 1.
struct SoftAssignment {
    Matrix weights;
};

inline double classification_loss(const Matrix& logits, std::span<const int> labels) {
    ad::Tape tape;
    return ad::cross_entropy(tape.constant(logits), labels).scalar();
}

inline double adversarial_loss(std::span<const double> predictions, std::span<const int> tags,
                               double clamp = 1e-7) {
    ad::Tape tape;
    Matrix p(predictions.size(), 1, std::vector<double>(predictions.begin(), predictions.end()));
    return ad::binary_cross_entropy(tape.constant(std::move(p)), tags, clamp).scalar();
}

/// W_ij = softmax_i(cos(Z_j, C_i) / temperature); the plain form uses temperature 1.
inline SoftAssignment similarity_weights(const Matrix& z, const PrototypeSet& c, double temperature = 1.0) {
    if (c.count() == 0) throw UsageError("similarity_weights: no prototypes");
    const Matrix sims = cosine_matrix(z, c.prototypes);
    SoftAssignment w{Matrix(z.rows(), c.count())};
    for (std::size_t j = 0; j < z.rows(); ++j) {
        const Vector s = softmax(sims.row(j), temperature);
        std::copy(s.begin(), s.end(), w.weights.row(j).begin());
    }
    return w;
}

/// C_i ← Σ_j W_ij Z_j / Σ_j W_ij.
inline PrototypeSet update_prototypes(const Matrix& z, const PrototypeSet& c, const SoftAssignment& w) {
    const Matrix& W = w.weights;
    if (W.rows() != z.rows() || W.cols() != c.count() || c.prototypes.cols() != z.cols())
        throw UsageError("update_prototypes: inconsistent shapes");
    PrototypeSet next{Matrix(c.count(), z.cols()), c.iteration + 1};
    for (std::size_t i = 0; i < c.count(); ++i) {
        double mass = 0.0;
        auto out = next.prototypes.row(i);
        for (std::size_t j = 0; j < z.rows(); ++j) {
            const double wij = W(j, i);
            mass += wij;
            auto zr = z.row(j);
            for (std::size_t k = 0; k < z.cols(); ++k) out[k] += wij * zr[k];
        }
        if (!(mass > 0.0)) throw DegenerateInputError("update_prototypes: prototype " + std::to_string(i) + " has no mass");
        for (double& v : out) v /= mass;
        if (!(norm(out) > 0.0)) throw DegenerateInputError("update_prototypes: zero-norm prototype " + std::to_string(i));
    }
    return next;
}

/// -Σ_i Σ_j W_ij cos(Z_j, C_i) + λ Σ_i ‖C_i‖² for a given W.
inline double prototype_matching_loss(const Matrix& z, const PrototypeSet& c, const SoftAssignment& w, double lambda) {
    if (lambda < 0.0) throw ParameterError("prototype_matching_loss: lambda must be >= 0");
    const Matrix sims = cosine_matrix(z, c.prototypes);
    double match = 0.0;
    for (std::size_t j = 0; j < z.rows(); ++j)
        for (std::size_t i = 0; i < c.count(); ++i) match += w.weights(j, i) * sims(j, i);
    double reg = 0.0;
    for (double v : c.prototypes.data()) reg += v * v;
    return -match + lambda * reg;
}

/// Differentiable form; W is recomputed from Z and C, so gradients flow through it.
inline ad::Var prototype_matching_loss(const ad::Var& z, const ad::Var& c, double lambda, double temperature = 1.0) {
    if (lambda < 0.0) throw ParameterError("prototype_matching_loss: lambda must be >= 0");
    ad::Var sims = ad::cosine_rows(z, c);
    ad::Var w = ad::softmax_rows(sims, temperature);
    ad::Var match = ad::sum(ad::mul(w, sims));
    return ad::add(ad::scale(match, -1.0), ad::scale(ad::sum(ad::square(c)), lambda));
}

/// Class-wise means under ground-truth labels (the t = 0 prototypes).
inline PrototypeSet class_mean_prototypes(const Matrix& z, std::span<const int> labels, std::size_t num_classes) {
    if (labels.size() != z.rows()) throw UsageError("class_mean_prototypes: label count mismatch");
    PrototypeSet c{Matrix(num_classes, z.cols()), 0};
    std::vector<double> counts(num_classes, 0.0);
    for (std::size_t j = 0; j < z.rows(); ++j) {
        const int y = labels[j];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw DataError("class_mean_prototypes: label out of range");
        counts[static_cast<std::size_t>(y)] += 1.0;
        auto row = c.prototypes.row(static_cast<std::size_t>(y));
        auto zr = z.row(j);
        for (std::size_t k = 0; k < z.cols(); ++k) row[k] += zr[k];
    }
    for (std::size_t i = 0; i < num_classes; ++i) {
        if (counts[i] == 0.0) throw DataError("class_mean_prototypes: class " + std::to_string(i) + " has no points");
        for (double& v : c.prototypes.row(i)) v /= counts[i];
    }
    return c;
}

struct PrototypeIterationResult {
    PrototypeSet prototypes;
    bool converged = false;
    std::size_t iterations = 0;
    std::vector<double> movement;  // max per-prototype L2 step, one per iteration
};

inline double max_row_distance(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(i, k)) * (a(i, k) - b(i, k));
        worst = std::max(worst, std::sqrt(s));
    }
    return worst;
}

/// Alternates similarity_weights / update_prototypes with Z fixed until the largest
/// prototype move is below `tolerance` or `max_iterations` is reached.
inline PrototypeIterationResult iterate_prototypes(const Matrix& z, PrototypeSet start, double tolerance = 1e-6,
                                                   std::size_t max_iterations = 200, double temperature = 1.0) {
    PrototypeIterationResult res;
    res.prototypes = std::move(start);
    for (std::size_t it = 0; it < max_iterations; ++it) {
        PrototypeSet next = update_prototypes(z, res.prototypes, similarity_weights(z, res.prototypes, temperature));
        const double move = max_row_distance(next.prototypes, res.prototypes.prototypes);
        res.movement.push_back(move);
        res.prototypes = std::move(next);
        res.iterations = it + 1;
        if (move < tolerance) {
            res.converged = true;
            break;
        }
    }
    return res;
}

}  // namespace cncd
