#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "cncd/baselines/labelers.hpp"
#include "cncd/gcn/labeler.hpp"
#include "support/instances.hpp"

using namespace cncd;

namespace {

// Graph whose only connections are the novel self-loops.
CausalGraph self_loop_graph(const Matrix& c, const Matrix& n) {
    CausalGraph g;
    g.base_nodes = c;
    g.novel_nodes = n;
    g.adjacency = Matrix(c.rows(), n.rows());
    g.novel_weights = Matrix::identity(n.rows());
    g.edge_mask.assign(c.rows() * n.rows(), 1);
    g.fallback.assign(n.rows(), 0);
    recompute_degrees(g);
    return g;
}

CausalGraph random_graph(Rng& rng, std::size_t M, std::size_t K, std::size_t d) {
    const Matrix c = fixtures::random_matrix(rng, M, d), n = fixtures::random_matrix(rng, K, d);
    const AttentionParams p{fixtures::random_matrix(rng, d, d), fixtures::random_matrix(rng, d, d), rng.uniform(0.05, 1.0)};
    return prune_graph(build_adjacency(c, n, p, rng.uniform(0.0, 0.6)));
}

}  // namespace

TEST(GcnLayer, SelfLoopsOnlyIsIdentity) {
    Rng rng(1);
    Matrix c = fixtures::random_matrix(rng, 3, 4), n(2, 4);
    for (double& v : n.data()) v = rng.uniform(0.0, 2.0);
    const CausalGraph g = self_loop_graph(c, n);
    for (double d : g.novel_degrees) EXPECT_EQ(d, 1.0);
    EXPECT_EQ(gcn_layer(g, c, n, GcnParams{}), n);
    EXPECT_EQ(propagate(g, c, n), n);
    // labels then reduce to nearest-prototype labels of the raw novel prototypes
    const std::vector<int> assign{0, 1, 1};
    const PseudoLabeling pl = assign_pseudo_labels(propagate(g, c, n), c, assign);
    const std::vector<int> nearest = nearest_prototype_labels(n, c);
    EXPECT_EQ(pl.prototype_labels, nearest);
}

TEST(GcnLayer, TwoNodeReference) {
    // One base node, one novel node, w = 1, unit self-loop. Degrees: 1 + incident weight,
    // so d_c = 2 and d_n = 2 and the update is σ(c/2 + n/2).
    const Matrix c{{0.4, -1.0, 2.0}}, n{{1.0, 0.5, -3.0}};
    const CausalGraph g = build_adjacency(c, n, identity_attention(3));
    ASSERT_EQ(g.adjacency(0, 0), 1.0);
    EXPECT_EQ(g.base_degrees[0], 2.0);
    EXPECT_EQ(g.novel_degrees[0], 2.0);
    const Matrix out = gcn_layer(g, c, n, GcnParams{});
    for (std::size_t r = 0; r < 3; ++r) {
        const double pre = 1.0 / std::sqrt(2.0 * 2.0) * c(0, r) + 1.0 / std::sqrt(2.0 * 2.0) * n(0, r);
        EXPECT_NEAR(out(0, r), leaky_relu(pre, 0.01), 1e-15);
    }
}

TEST(GcnLayer, MatchesDirectUpdateRuleOnRandomGraphs) {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        const CausalGraph g = random_graph(rng, 4, 3, 5);
        const Matrix& c = g.base_nodes;
        const Matrix& n = g.novel_nodes;
        const Matrix out = gcn_layer(g, c, n, GcnParams{3, 0.2});
        for (std::size_t j = 0; j < 3; ++j)
            for (std::size_t r = 0; r < 5; ++r) {
                double pre = 0.0;
                for (std::size_t i = 0; i < 4; ++i)
                    if (g.active(i, j)) pre += g.adjacency(i, j) / std::sqrt(g.base_degrees[i] * g.novel_degrees[j]) * c(i, r);
                for (std::size_t k = 0; k < 3; ++k)
                    pre += g.novel_weights(j, k) / std::sqrt(g.novel_degrees[j] * g.novel_degrees[k]) * n(k, r);
                EXPECT_NEAR(out(j, r), pre >= 0 ? pre : 0.2 * pre, 1e-12);
            }
    }
}

TEST(GcnLayer, PreActivationIsLinear) {
    Rng rng(3);
    const CausalGraph g = random_graph(rng, 3, 2, 4);
    Matrix c = g.base_nodes, n = g.novel_nodes;
    // σ is positively homogeneous, so doubling both inputs doubles the output
    const GcnParams linear{1, 0.999999};
    const Matrix a = gcn_layer(g, c, n, linear);
    for (double& v : c.data()) v *= 2.0;
    for (double& v : n.data()) v *= 2.0;
    const Matrix b = gcn_layer(g, c, n, linear);
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] >= 0.0) {
            EXPECT_NEAR(b.data()[i], 2.0 * a.data()[i], 1e-12);
        }
}

TEST(GcnLayer, ShapeMismatchIsUsageError) {
    Rng rng(4);
    const CausalGraph g = random_graph(rng, 3, 2, 4);
    EXPECT_THROW(gcn_layer(g, Matrix(2, 4), g.novel_nodes, GcnParams{}), UsageError);
    EXPECT_THROW(gcn_layer(g, g.base_nodes, Matrix(2, 3), GcnParams{}), UsageError);
}

TEST(Propagate, CompositionAndValidation) {
    Rng rng(5);
    const CausalGraph g = random_graph(rng, 4, 3, 6);
    const Matrix& c = g.base_nodes;
    EXPECT_THROW(propagate(g, c, g.novel_nodes, GcnParams{0, 0.01}), ParameterError);
    EXPECT_EQ(propagate(g, c, g.novel_nodes, GcnParams{1, 0.01}), gcn_layer(g, c, g.novel_nodes, GcnParams{}));
    const GcnParams p;
    const Matrix manual = gcn_layer(g, c, gcn_layer(g, c, gcn_layer(g, c, g.novel_nodes, p), p), p);
    EXPECT_EQ(propagate(g, c, g.novel_nodes, p), manual);
    // base features are an input only
    const Matrix before = g.base_nodes;
    propagate(g, g.base_nodes, g.novel_nodes);
    EXPECT_EQ(g.base_nodes, before);
}

TEST(Propagate, FiniteOnRandomGraphs) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const CausalGraph g = random_graph(rng, 4, 3, 8);
        EXPECT_TRUE(all_finite(propagate(g, g.base_nodes, g.novel_nodes))) << "seed " << seed;
    }
}

TEST(PseudoLabels, Examples) {
    const Matrix c{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.3, 0.3, 0.9}};
    const std::vector<int> none;
    EXPECT_EQ(assign_pseudo_labels(Matrix{{0.3, 0.3, 0.9}}, c, none).prototype_labels, std::vector<int>{2});

    const Matrix e{{1.0, 0.0}, {0.0, 1.0}};
    EXPECT_EQ(assign_pseudo_labels(Matrix{{1.0, 0.1}}, e, none).prototype_labels, std::vector<int>{0});
    EXPECT_EQ(assign_pseudo_labels(Matrix{{1.0, 1.0}}, e, none).prototype_labels, std::vector<int>{0});
    EXPECT_EQ(assign_pseudo_labels(Matrix{{1.0, 0.1}}, e, none, true).prototype_labels, std::vector<int>{1});

    const std::vector<int> assign{1, 0, 1};
    const PseudoLabeling pl = assign_pseudo_labels(Matrix{{1.0, 0.1}, {0.1, 1.0}}, e, assign);
    EXPECT_EQ(pl.point_labels, (std::vector<int>{1, 0, 1}));
    for (double conf : pl.confidence) {
        EXPECT_GT(conf, 0.5);
        EXPECT_LE(conf, 1.0);
    }
    const std::vector<int> bad{2};
    EXPECT_THROW(assign_pseudo_labels(Matrix{{1.0, 0.1}, {0.1, 1.0}}, e, bad), DataError);
}

TEST(PseudoLabels, ScaleInvariantAndPermutationEquivariant) {
    Rng rng(6);
    for (int t = 0; t < 100; ++t) {
        const Matrix n = fixtures::random_matrix(rng, 3, 4), c = fixtures::random_matrix(rng, 5, 4);
        const std::vector<int> none;
        const auto base = assign_pseudo_labels(n, c, none).prototype_labels;
        Matrix scaled = n;
        for (std::size_t j = 0; j < 3; ++j)
        {
            const double f = rng.uniform(0.01, 100.0);
            for (double& v : scaled.row(j)) v *= f;
        }
        EXPECT_EQ(assign_pseudo_labels(scaled, c, none).prototype_labels, base);

        const std::vector<std::size_t> perm{3, 0, 4, 1, 2};  // new row r holds old row perm[r]
        const auto permuted = assign_pseudo_labels(n, select_rows(c, perm), none).prototype_labels;
        for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(perm[static_cast<std::size_t>(permuted[j])], static_cast<std::size_t>(base[j]));
    }
}
