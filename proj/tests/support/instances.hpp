#pragma once

// Random small instances of every differentiable loss, shared by the unit tests
// and the acceptance runner.

#include <string>
#include <vector>

#include "cncd/core/gradcheck.hpp"
#include "cncd/core/random.hpp"
#include "cncd/crg/graph.hpp"
#include "cncd/crp/networks.hpp"
#include "cncd/crp/prototypes.hpp"

namespace cncd::fixtures {

struct GradInstance {
    std::string name;
    LossBuilder loss;
    std::vector<NamedParam> params;
};

inline Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data()) v = scale * rng.normal();
    return m;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
    std::vector<int> out(n);
    for (int& y : out) y = static_cast<int>(rng.index(classes));
    return out;
}

/// Classification loss through the whole extractor and cosine head.
inline GradInstance classification_instance(Rng& rng) {
    const std::size_t P = 6, in = 4, hidden = 5, d = 3, M = 3;
    ExtractorParams e = init_extractor(in, hidden, d, M, rng.next_u64());
    Matrix x = random_matrix(rng, P, in);
    std::vector<int> labels = random_labels(rng, P, M);
    std::vector<NamedParam> params;
    const char* names[] = {"W1", "B1", "W2", "B2", "HeadW"};
    for (std::size_t i = 0; i < e.tensors.size(); ++i) {
        Matrix t = e.tensors[i];
        if (t.rows() == 1) t = random_matrix(rng, 1, t.cols(), 0.1);  // nonzero biases
        params.push_back({names[i], t});
    }
    const double slope = e.slope;
    Matrix center = random_matrix(rng, 1, d, 0.1);
    return {"classification",
            [x, labels, slope, center](ad::Tape& t, const std::vector<ad::Var>& v) {
                BoundParams b{v};
                return ad::cross_entropy(classify(b, 10.0, extract_features(b, slope, center, t.constant(x))), labels);
            },
            std::move(params)};
}

/// Adversarial BCE through the adversary and the features feeding it.
inline GradInstance adversarial_instance(Rng& rng) {
    const std::size_t P = 6, d = 3, hidden = 4;
    AdversaryParams a = init_adversary(d, hidden, rng.next_u64());
    std::vector<int> tags(P);
    for (int& u : tags) u = rng.bernoulli(0.5) ? 1 : 0;
    std::vector<NamedParam> params{{"Z", random_matrix(rng, P, d)}};
    const char* names[] = {"A1", "a1", "A2", "a2"};
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        Matrix t = a.tensors[i];
        if (t.rows() == 1) t = random_matrix(rng, 1, t.cols(), 0.1);
        params.push_back({names[i], t});
    }
    const double slope = a.slope;
    return {"adversarial",
            [tags, slope](ad::Tape&, const std::vector<ad::Var>& v) {
                BoundParams b{std::vector<ad::Var>(v.begin() + 1, v.end())};
                return ad::binary_cross_entropy(adversary_predict(b, slope, v[0]), tags);
            },
            std::move(params)};
}

/// Prototype matching loss, gradients w.r.t. both features and prototypes.
inline GradInstance prototype_instance(Rng& rng, double temperature = 1.0) {
    const std::size_t P = 5, d = 3, M = 3;
    return {"prototype_matching",
            [temperature](ad::Tape&, const std::vector<ad::Var>& v) {
                return prototype_matching_loss(v[0], v[1], 0.02, temperature);
            },
            {{"Z", random_matrix(rng, P, d)}, {"C", random_matrix(rng, M, d)}}};
}

/// Direction loss of the reversed candidates w.r.t. the attention projections.
inline GradInstance direction_instance(Rng& rng) {
    const std::size_t M = 3, K = 2, d = 3, da = 2;
    Matrix c = normalize_rows(random_matrix(rng, M, d));
    Matrix n = normalize_rows(random_matrix(rng, K, d));
    return {"direction",
            [c, n](ad::Tape& t, const std::vector<ad::Var>& v) {
                return graph_ad::direction_loss(graph_ad::reversed(t.constant(c), t.constant(n), v[0], v[1], 0.06));
            },
            {{"Q", random_matrix(rng, d, da, 0.5)}, {"K", random_matrix(rng, d, da, 0.5)}}};
}

/// Sigmoid-relaxed pruning loss w.r.t. the weights and the threshold.
inline GradInstance soft_pruning_instance(Rng& rng) {
    Matrix w(3, 2);
    for (double& x : w.data()) x = rng.uniform(0.05, 0.95);
    return {"soft_pruning",
            [](ad::Tape&, const std::vector<ad::Var>& v) { return graph_ad::soft_pruning_loss(v[0], v[1], 0.01); },
            {{"w", w}, {"theta", Matrix(1, 1, rng.uniform(0.2, 0.8))}}};
}

inline std::vector<GradInstance (*)(Rng&)> all_gradient_families() {
    return {classification_instance, adversarial_instance,
            [](Rng& r) { return prototype_instance(r); }, direction_instance, soft_pruning_instance};
}

}  // namespace cncd::fixtures
