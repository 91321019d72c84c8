#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"
#include "cncd/crg/graph.hpp"

namespace cncd {

struct GcnParams {
    std::size_t layers = 3;
    double slope = 0.01;

    void validate() const {
        if (layers < 1) throw ParameterError("GcnParams: layers must be >= 1");
        if (!(slope > 0.0 && slope < 1.0)) throw ParameterError("GcnParams: slope must be in (0, 1)");
    }
};

/// One propagation step into the novel nodes:
///   n_j ← σ( Σ_i w_ij / sqrt(d_i d_j) · c_i + Σ_k w_jk / sqrt(d_j d_k) · n_k ),
/// summing over surviving base edges and all novel-novel weights (self-loop included).
/// Base features are read only.
inline Matrix gcn_layer(const CausalGraph& g, const Matrix& base, const Matrix& novel, const GcnParams& p) {
    const std::size_t M = g.num_base(), K = g.num_novel();
    if (base.rows() != M || novel.rows() != K || base.cols() != novel.cols())
        throw UsageError("gcn_layer: feature shapes do not match the graph");
    const std::size_t d = base.cols();
    Matrix out(K, d);
    for (std::size_t j = 0; j < K; ++j) {
        auto acc = out.row(j);
        const double dj = g.novel_degrees[j];
        for (std::size_t i = 0; i < M; ++i) {
            if (!g.active(i, j)) continue;
            const double coef = g.adjacency(i, j) / std::sqrt(g.base_degrees[i] * dj);
            auto ci = base.row(i);
            for (std::size_t r = 0; r < d; ++r) acc[r] += coef * ci[r];
        }
        for (std::size_t k = 0; k < K; ++k) {
            const double coef = g.novel_weights(j, k) / std::sqrt(dj * g.novel_degrees[k]);
            auto nk = novel.row(k);
            for (std::size_t r = 0; r < d; ++r) acc[r] += coef * nk[r];
        }
        for (double& v : acc) v = leaky_relu(v, p.slope);
    }
    return out;
}

/// n^final after `layers` applications of gcn_layer.
inline Matrix propagate(const CausalGraph& g, const Matrix& base, const Matrix& novel, const GcnParams& p = {}) {
    p.validate();
    Matrix n = novel;
    for (std::size_t l = 0; l < p.layers; ++l) n = gcn_layer(g, base, n, p);
    return n;
}

struct PseudoLabeling {
    std::vector<int> prototype_labels;  // ŷ_j in [0, M)
    std::vector<int> point_labels;      // one per novel point
    std::vector<double> confidence;     // one per novel point
    std::vector<double> prototype_confidence;
};

/// ŷ_j = argmax_i cos(n_j, c_i) (argmin when `use_argmin`); ties go to the smallest
/// index. Each point inherits the label of the prototype it is assigned to, and its
/// confidence is the largest softmax entry of that prototype's similarities.
inline PseudoLabeling assign_pseudo_labels(const Matrix& n_final, const Matrix& base_prototypes,
                                           std::span<const int> point_assignment, bool use_argmin = false) {
    const Matrix sims = cosine_matrix(n_final, base_prototypes);
    PseudoLabeling out;
    for (std::size_t j = 0; j < n_final.rows(); ++j) {
        auto row = sims.row(j);
        std::size_t best = 0;
        for (std::size_t i = 1; i < row.size(); ++i)
            if (use_argmin ? row[i] < row[best] : row[i] > row[best]) best = i;
        const Vector sm = softmax(row, 1.0);
        out.prototype_labels.push_back(static_cast<int>(best));
        out.prototype_confidence.push_back(*std::max_element(sm.begin(), sm.end()));
    }
    out.point_labels.reserve(point_assignment.size());
    for (int a : point_assignment) {
        if (a < 0 || static_cast<std::size_t>(a) >= n_final.rows())
            throw DataError("assign_pseudo_labels: point assigned to unknown prototype " + std::to_string(a));
        out.point_labels.push_back(out.prototype_labels[static_cast<std::size_t>(a)]);
        out.confidence.push_back(out.prototype_confidence[static_cast<std::size_t>(a)]);
    }
    return out;
}

}  // namespace cncd
