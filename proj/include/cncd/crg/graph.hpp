#pragma once

// Causal reasoning graph over base prototypes (c_i) and novel prototypes (n_j).
//
// Edge weights come from scaled dot-product attention: the base node is the query
// and the novel node the key, and each novel node's incoming weights are a softmax
// over base nodes at temperature tau. Novel-novel weights use the same attention
// (novel query, novel key) normalized per target node, with the self-loop fixed to 1.
// Reversed candidates n_j -> c_i carry weight sigmoid((s(n_j, c_i) - s(c_i, n_j)) / tau),
// which is 1/2 while the attention is symmetric and is what the direction loss trains.

#include <cmath>
#include <cstdint>
#include <vector>

#include "cncd/core/autodiff.hpp"
#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd {

struct AttentionParams {
    Matrix query;  // d × d_attn, applied to base nodes
    Matrix key;    // d × d_attn, applied to novel nodes
    double tau = 0.06;

    std::size_t attn_dim() const { return query.cols(); }

    friend bool operator==(const AttentionParams&, const AttentionParams&) = default;

    void validate() const {
        if (!(tau > 0.0)) throw ParameterError("AttentionParams: tau must be > 0");
        if (query.rows() != key.rows() || query.cols() != key.cols())
            throw UsageError("AttentionParams: query/key shapes differ");
        if (!all_finite(query) || !all_finite(key)) throw ParameterError("AttentionParams: non-finite projection");
    }
};

inline AttentionParams identity_attention(std::size_t dim, double tau = 0.06) {
    return {Matrix::identity(dim), Matrix::identity(dim), tau};
}

/// (c Q) · (n K) / sqrt(d_attn).
inline double attention_score(std::span<const double> c, std::span<const double> n, const AttentionParams& p) {
    if (c.size() != p.query.rows() || n.size() != p.key.rows())
        throw UsageError("attention_score: vector dimension does not match projections");
    double s = 0.0;
    for (std::size_t a = 0; a < p.attn_dim(); ++a) {
        double qa = 0.0, ka = 0.0;
        for (std::size_t r = 0; r < c.size(); ++r) {
            qa += c[r] * p.query(r, a);
            ka += n[r] * p.key(r, a);
        }
        s += qa * ka;
    }
    return s / std::sqrt(static_cast<double>(p.attn_dim()));
}

/// All pairwise scores: S(a, b) = attention_score(x_a, y_b).
inline Matrix attention_scores(const Matrix& x, const Matrix& y, const AttentionParams& p) {
    const Matrix qx = matmul(x, p.query);
    const Matrix ky = matmul(y, p.key);
    Matrix s = matmul(qx, transpose(ky));
    const double inv = 1.0 / std::sqrt(static_cast<double>(p.attn_dim()));
    for (double& v : s.data()) v *= inv;
    return s;
}

struct CausalGraph {
    Matrix base_nodes;     // M × d
    Matrix novel_nodes;    // K × d
    Matrix adjacency;      // M × K, w_ij; columns sum to 1
    Matrix novel_weights;  // K × K, row j holds incoming weights w_jk, diagonal 1
    double theta = 0.5;
    /// 1 where the base→novel edge survives pruning (M × K, row-major).
    std::vector<std::uint8_t> edge_mask;
    /// Per novel node: its only surviving edge is a below-threshold fallback.
    std::vector<std::uint8_t> fallback;
    std::vector<double> base_degrees;
    std::vector<double> novel_degrees;

    std::size_t num_base() const { return adjacency.rows(); }
    std::size_t num_novel() const { return adjacency.cols(); }
    bool active(std::size_t i, std::size_t j) const { return edge_mask[i * num_novel() + j] != 0; }

    friend bool operator==(const CausalGraph&, const CausalGraph&) = default;
};

/// d = 1 + weighted degree over surviving base→novel edges (+ off-diagonal novel-novel
/// weights for novel nodes). The self-loop is covered by the leading 1.
inline void recompute_degrees(CausalGraph& g) {
    const std::size_t M = g.num_base(), K = g.num_novel();
    g.base_degrees.assign(M, 1.0);
    g.novel_degrees.assign(K, 1.0);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < K; ++j)
            if (g.active(i, j)) {
                g.base_degrees[i] += g.adjacency(i, j);
                g.novel_degrees[j] += g.adjacency(i, j);
            }
    for (std::size_t j = 0; j < K; ++j)
        for (std::size_t k = 0; k < K; ++k)
            if (k != j) g.novel_degrees[j] += g.novel_weights(j, k);
}

inline Matrix novel_novel_weights(const Matrix& n, const AttentionParams& p) {
    const std::size_t K = n.rows();
    const Matrix s = attention_scores(n, n, p);
    Matrix w(K, K);
    for (std::size_t j = 0; j < K; ++j) {
        const Vector row = softmax(s.row(j), p.tau);
        for (std::size_t k = 0; k < K; ++k) w(j, k) = k == j ? 1.0 : row[k];
    }
    return w;
}

/// Unpruned graph; `theta` is recorded but not yet applied.
inline CausalGraph build_adjacency(const Matrix& c, const Matrix& n, const AttentionParams& p, double theta = 0.5) {
    p.validate();
    if (c.rows() < 1 || n.rows() < 1) throw UsageError("build_adjacency: need at least one base and one novel node");
    if (c.cols() != n.cols()) throw UsageError("build_adjacency: node dimensions differ");
    const std::size_t M = c.rows(), K = n.rows();
    CausalGraph g;
    g.base_nodes = c;
    g.novel_nodes = n;
    const Matrix s = attention_scores(c, n, p);
    g.adjacency = Matrix(M, K);
    Vector col(M);
    for (std::size_t j = 0; j < K; ++j) {
        for (std::size_t i = 0; i < M; ++i) col[i] = s(i, j);
        const Vector w = softmax(col, p.tau);
        for (std::size_t i = 0; i < M; ++i) g.adjacency(i, j) = w[i];
    }
    g.novel_weights = novel_novel_weights(n, p);
    g.theta = theta;
    g.edge_mask.assign(M * K, 1);
    g.fallback.assign(K, 0);
    recompute_degrees(g);
    return g;
}

/// Drops edges with w_ij < theta. A novel node that would lose every incoming edge
/// keeps its strongest one (smallest index on ties) and is flagged.
inline CausalGraph prune_graph(CausalGraph g) {
    const std::size_t M = g.num_base(), K = g.num_novel();
    for (std::size_t j = 0; j < K; ++j) {
        bool any = false;
        for (std::size_t i = 0; i < M; ++i) {
            const bool keep = !(g.adjacency(i, j) < g.theta);
            g.edge_mask[i * K + j] = keep ? 1 : 0;
            any = any || keep;
        }
        g.fallback[j] = any ? 0 : 1;
        if (!any) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < M; ++i)
                if (g.adjacency(i, j) > g.adjacency(best, j)) best = i;
            g.edge_mask[best * K + j] = 1;
        }
    }
    recompute_degrees(g);
    return g;
}

// ---------------------------------------------------------------- edge losses

struct EdgeCandidate {
    std::size_t source = 0;  // node id: base i -> i, novel j -> M + j
    std::size_t target = 0;
    double weight = 0.0;
    std::size_t num_base = 0;  // M, needed to classify node ids

    bool source_is_base() const { return source < num_base; }
    bool target_is_base() const { return target < num_base; }
    /// I(c_i → n_j): 1 exactly when the edge runs base → novel.
    int direction_indicator() const { return source_is_base() && !target_is_base() ? 1 : 0; }
};

/// Σ (w · (1 − I))² over the candidates.
inline double direction_loss(std::span<const EdgeCandidate> candidates) {
    double s = 0.0;
    for (const auto& e : candidates) {
        if (!std::isfinite(e.weight)) throw UsageError("direction_loss: non-finite weight");
        const double v = e.weight * (1.0 - e.direction_indicator());
        s += v * v;
    }
    return s;
}

/// Hard-indicator value: Σ over edges with w < theta of w².
inline double pruning_loss(const Matrix& weights, double theta) {
    double s = 0.0;
    for (double w : weights.data())
        if (w < theta) s += w * w;
    return s;
}

inline double pruning_loss(const CausalGraph& g) { return pruning_loss(g.adjacency, g.theta); }

/// Reversed-candidate weights (M × K): sigmoid((s(n_j, c_i) − s(c_i, n_j)) / tau).
inline Matrix reversed_weights(const Matrix& c, const Matrix& n, const AttentionParams& p) {
    const Matrix fwd = attention_scores(c, n, p);
    const Matrix rev = transpose(attention_scores(n, c, p));
    Matrix out(fwd.rows(), fwd.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double z = (rev.data()[i] - fwd.data()[i]) / p.tau;
        out.data()[i] = 1.0 / (1.0 + std::exp(-z));
    }
    return out;
}

/// Forward edges c_i → n_j for every pair, then (optionally) the reversed n_j → c_i.
inline std::vector<EdgeCandidate> edge_candidates(const Matrix& c, const Matrix& n, const AttentionParams& p,
                                                  bool include_reversed = true) {
    const CausalGraph g = build_adjacency(c, n, p);
    const std::size_t M = c.rows(), K = n.rows();
    std::vector<EdgeCandidate> out;
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < K; ++j) out.push_back({i, M + j, g.adjacency(i, j), M});
    if (include_reversed) {
        const Matrix r = reversed_weights(c, n, p);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t j = 0; j < K; ++j) out.push_back({M + j, i, r(i, j), M});
    }
    return out;
}

namespace graph_ad {

/// Differentiable attention scores (rows of x against rows of y).
inline ad::Var scores(const ad::Var& x, const ad::Var& y, const ad::Var& q, const ad::Var& k) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
    return ad::scale(ad::matmul(ad::matmul(x, q), ad::transpose(ad::matmul(y, k))), inv);
}

/// M × K adjacency with per-column softmax.
inline ad::Var adjacency(const ad::Var& c, const ad::Var& n, const ad::Var& q, const ad::Var& k, double tau) {
    return ad::softmax_cols(scores(c, n, q, k), tau);
}

inline ad::Var reversed(const ad::Var& c, const ad::Var& n, const ad::Var& q, const ad::Var& k, double tau) {
    ad::Var diff = ad::sub(ad::transpose(scores(n, c, q, k)), scores(c, n, q, k));
    return ad::sigmoid(ad::scale(diff, 1.0 / tau));
}

/// Direction loss when every forward weight has indicator 1: only reversed weights count.
inline ad::Var direction_loss(const ad::Var& reversed_weights) { return ad::sum(ad::square(reversed_weights)); }

/// Hard forward value, sigmoid-surrogate gradient.
inline ad::Var pruning_loss(const ad::Var& w, const ad::Var& theta, double eps) {
    return ad::sum(ad::mul(ad::indicator_below(w, theta, eps), ad::square(w)));
}

/// Fully smooth relaxation Σ sigmoid((theta − w)/eps) · w², used for gradient checks.
inline ad::Var soft_pruning_loss(const ad::Var& w, const ad::Var& theta, double eps) {
    const auto& wv = w.value();
    ad::Var gate = ad::sigmoid(ad::scale(ad::sub(ad::broadcast(theta, wv.rows(), wv.cols()), w), 1.0 / eps));
    return ad::sum(ad::mul(gate, ad::square(w)));
}

}  // namespace graph_ad

// ---------------------------------------------------------------- fitting

struct GraphConfig {
    double tau = 0.06;
    double theta_init = 0.5;
    double theta_min = 0.01;
    double theta_max = 0.99;
    double surrogate_eps = 0.01;
    double direction_weight = 1.0;
    double pruning_weight = 1.0;
    double learning_rate = 0.05;
    std::size_t steps = 100;
    bool include_reversed = true;
    std::size_t max_backtracks = 30;
};

struct GraphTracePoint {
    std::size_t step = 0;
    double l_direction = 0.0;
    double l_pruning = 0.0;
    double theta = 0.0;
};

struct GraphFit {
    CausalGraph graph;  // pruned at the final theta
    AttentionParams attention;
    std::vector<GraphTracePoint> trace;
};

namespace detail {

/// Hard-valued weighted objective at the given projections and threshold.
inline double graph_objective(const Matrix& c, const Matrix& n, const AttentionParams& p, double theta,
                              const GraphConfig& cfg) {
    const double dir = cfg.include_reversed ? [&] {
        const Matrix r = reversed_weights(c, n, p);
        double s = 0.0;
        for (double v : r.data()) s += v * v;
        return s;
    }() : 0.0;
    return cfg.direction_weight * dir + cfg.pruning_weight * pruning_loss(build_adjacency(c, n, p).adjacency, theta);
}

}  // namespace detail

/// Gradient descent on direction + pruning loss over the projections and theta,
/// starting from identity projections. Each step backtracks (halving the step up to
/// `max_backtracks` times) until the objective does not increase; if no trial step
/// qualifies the parameters stay put. Theta is clamped after every step.
inline GraphFit fit_graph(const Matrix& c, const Matrix& n, const GraphConfig& cfg = {}) {
    if (!(cfg.theta_min > 0.0 && cfg.theta_max < 1.0 && cfg.theta_min < cfg.theta_max))
        throw ParameterError("fit_graph: theta bounds must satisfy 0 < min < max < 1");
    if (!(cfg.theta_init > 0.0 && cfg.theta_init < 1.0)) throw ParameterError("fit_graph: theta_init must be in (0, 1)");
    if (!(cfg.learning_rate > 0.0)) throw ParameterError("fit_graph: learning_rate must be > 0");
    GraphFit out;
    out.attention = identity_attention(c.cols(), cfg.tau);
    double theta = std::clamp(cfg.theta_init, cfg.theta_min, cfg.theta_max);

    for (std::size_t step = 0; step <= cfg.steps; ++step) {
        ad::Tape tape;
        ad::Var cv = tape.constant(c), nv = tape.constant(n);
        ad::Var q = tape.param(out.attention.query), k = tape.param(out.attention.key);
        ad::Var th = tape.scalar_param(theta);
        ad::Var w = graph_ad::adjacency(cv, nv, q, k, cfg.tau);
        ad::Var l_dir = tape.scalar_constant(0.0);
        if (cfg.include_reversed) l_dir = graph_ad::direction_loss(graph_ad::reversed(cv, nv, q, k, cfg.tau));
        ad::Var l_pru = graph_ad::pruning_loss(w, th, cfg.surrogate_eps);
        out.trace.push_back({step, l_dir.scalar(), l_pru.scalar(), theta});
        if (step == cfg.steps) break;  // last entry records the final state
        ad::Var total = ad::add(ad::scale(l_dir, cfg.direction_weight), ad::scale(l_pru, cfg.pruning_weight));
        tape.backward(total);
        const Matrix gq = tape.grad(q);
        const Matrix gk = tape.grad(k);
        const double gth = tape.grad(th)(0, 0);

        double lr = cfg.learning_rate;
        for (std::size_t attempt = 0; attempt <= cfg.max_backtracks; ++attempt, lr *= 0.5) {
            AttentionParams trial = out.attention;
            for (std::size_t i = 0; i < gq.size(); ++i) {
                trial.query.data()[i] -= lr * gq.data()[i];
                trial.key.data()[i] -= lr * gk.data()[i];
            }
            const double trial_theta = std::clamp(theta - lr * gth, cfg.theta_min, cfg.theta_max);
            if (!all_finite(trial.query) || !all_finite(trial.key)) continue;
            if (detail::graph_objective(c, n, trial, trial_theta, cfg) <= total.scalar()) {
                out.attention = std::move(trial);
                theta = trial_theta;
                break;
            }
        }
    }
    out.graph = prune_graph(build_adjacency(c, n, out.attention, theta));
    return out;
}

}  // namespace cncd
