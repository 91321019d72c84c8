#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cncd/core/autodiff.hpp"
#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"
#include "cncd/core/random.hpp"

namespace cncd {

/// MLP feature extractor d_raw → hidden → d with a cosine classification head:
/// logits_i = head_scale · cos(z, w_i), one row w_i of HeadW (M × d) per class.
/// Hidden units use LeakyReLU; the feature layer is linear.
struct ExtractorParams {
    enum Index : std::size_t { W1, B1, W2, B2, HeadW, Count };
    std::vector<Matrix> tensors;
    double slope = 0.01;
    double head_scale = 10.0;
    /// 1 × d offset subtracted from the feature layer output (not trained by gradient).
    Matrix center;

    std::size_t input_dim() const { return tensors[W1].rows(); }
    std::size_t hidden_dim() const { return tensors[W1].cols(); }
    std::size_t feature_dim() const { return tensors[W2].cols(); }
    std::size_t num_classes() const { return tensors[HeadW].rows(); }

    friend bool operator==(const ExtractorParams&, const ExtractorParams&) = default;
};

/// MLP adversary d → hidden → 1 with sigmoid output.
struct AdversaryParams {
    enum Index : std::size_t { W1, B1, W2, B2, Count };
    std::vector<Matrix> tensors;
    double slope = 0.01;

    friend bool operator==(const AdversaryParams&, const AdversaryParams&) = default;
};

namespace detail {

inline Matrix he_init(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
    Matrix w(fan_in, fan_out);
    const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data()) v = rng.normal(0.0, s);
    return w;
}

}  // namespace detail

inline ExtractorParams init_extractor(std::size_t input_dim, std::size_t hidden, std::size_t feature_dim,
                                      std::size_t num_classes, std::uint64_t seed, double slope = 0.01) {
    if (hidden < feature_dim) throw ParameterError("extractor: hidden width must be >= feature dim");
    if (input_dim == 0 || feature_dim == 0 || num_classes == 0) throw ParameterError("extractor: zero dimension");
    Rng rng(seed);
    ExtractorParams p;
    p.slope = slope;
    p.tensors.resize(ExtractorParams::Count);
    p.tensors[ExtractorParams::W1] = detail::he_init(rng, input_dim, hidden);
    p.tensors[ExtractorParams::B1] = Matrix(1, hidden);
    p.tensors[ExtractorParams::W2] = detail::he_init(rng, hidden, feature_dim);
    p.tensors[ExtractorParams::B2] = Matrix(1, feature_dim);
    p.tensors[ExtractorParams::HeadW] = detail::he_init(rng, num_classes, feature_dim);
    p.center = Matrix(1, feature_dim);
    return p;
}

inline AdversaryParams init_adversary(std::size_t feature_dim, std::size_t hidden, std::uint64_t seed,
                                      double slope = 0.01) {
    Rng rng(seed);
    AdversaryParams p;
    p.slope = slope;
    p.tensors.resize(AdversaryParams::Count);
    p.tensors[AdversaryParams::W1] = detail::he_init(rng, feature_dim, hidden);
    p.tensors[AdversaryParams::B1] = Matrix(1, hidden);
    p.tensors[AdversaryParams::W2] = detail::he_init(rng, hidden, 1);
    p.tensors[AdversaryParams::B2] = Matrix(1, 1);
    return p;
}

/// Parameters placed on a tape, either trainable or frozen.
struct BoundParams {
    std::vector<ad::Var> vars;
};

inline BoundParams bind_params(ad::Tape& tape, const std::vector<Matrix>& tensors, bool trainable) {
    BoundParams b;
    for (const Matrix& m : tensors) b.vars.push_back(trainable ? tape.param(m) : tape.constant(m));
    return b;
}

inline ad::Var extract_features(const BoundParams& e, double slope, const Matrix& center, const ad::Var& x) {
    using I = ExtractorParams;
    ad::Var h = ad::leaky_relu(ad::add_row(ad::matmul(x, e.vars[I::W1]), e.vars[I::B1]), slope);
    Matrix neg = center;
    for (double& v : neg.data()) v = -v;
    ad::Var z = ad::add_row(ad::matmul(h, e.vars[I::W2]), e.vars[I::B2]);
    return ad::add_row(z, x.tape()->constant(std::move(neg)));
}

inline ad::Var classify(const BoundParams& e, double head_scale, const ad::Var& z) {
    return ad::scale(ad::cosine_rows(z, e.vars[ExtractorParams::HeadW]), head_scale);
}

inline ad::Var adversary_predict(const BoundParams& a, double slope, const ad::Var& z) {
    using I = AdversaryParams;
    ad::Var h = ad::leaky_relu(ad::add_row(ad::matmul(z, a.vars[I::W1]), a.vars[I::B1]), slope);
    return ad::sigmoid(ad::add_row(ad::matmul(h, a.vars[I::W2]), a.vars[I::B2]));
}

/// Inference without gradients.
inline Matrix features(const ExtractorParams& p, const Matrix& x) {
    ad::Tape tape;
    return extract_features(bind_params(tape, p.tensors, false), p.slope, p.center, tape.constant(x)).value();
}

inline Matrix logits(const ExtractorParams& p, const Matrix& z) {
    ad::Tape tape;
    return classify(bind_params(tape, p.tensors, false), p.head_scale, tape.constant(z)).value();
}

inline Matrix adversary_probabilities(const AdversaryParams& p, const Matrix& z) {
    ad::Tape tape;
    return adversary_predict(bind_params(tape, p.tensors, false), p.slope, tape.constant(z)).value();
}

inline std::vector<int> predict_classes(const ExtractorParams& p, const Matrix& z) {
    const Matrix lg = logits(p, z);
    std::vector<int> out(lg.rows());
    for (std::size_t r = 0; r < lg.rows(); ++r) out[r] = static_cast<int>(argmax(lg.row(r)));
    return out;
}

}  // namespace cncd
