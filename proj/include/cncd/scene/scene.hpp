#pragma once

// Synthetic confounded point scenes.
//
// Generative process (shared structure drawn once from spec.seed):
//   * base class b has a signature s_b on the causal channels, |s_b| = signature_scale;
//   * novel class j derives from parent base class p(j): its signature is s_p
//     rotated by `angle` inside the plane spanned by s_p and a random orthogonal
//     direction, plus a shift of norm `shift` (both on causal channels only);
//   * every base class b also owns a shortcut pattern v_b on the confounded channels,
//     v_b = normalize(shortcut_common · 1/sqrt(n) + e_b), so a tagged point is
//     detectable from the confounded channels whatever class pattern it carries.
// Per point: attrs = signature + N(0, noise_sigma²) on every channel. The binary
// confounder tag U ~ Bernoulli(0.5); when U = 1 the point gets
// confounder_strength · v_k added on the confounded channels. In train scenes k is
// the point's own base class (random base class for novel points); in test scenes
// k is replaced by a random base class with probability confounder_flip_rate.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/hash.hpp"
#include "cncd/core/matrix.hpp"
#include "cncd/core/random.hpp"

namespace cncd {

inline constexpr int kUnlabeled = -1;

enum class Split { Train, Test };

inline const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct NovelDerivation {
    std::size_t parent = 0;
    double angle = std::numbers::pi / 4.0;  // radians
    double shift = 0.3;
};

struct SceneSpec {
    std::size_t num_base = 4;    // M
    std::size_t num_novel = 3;   // K
    std::size_t points = 2048;   // P
    std::size_t dim = 16;        // d
    std::size_t confounded_channels = 4;
    double confounder_strength = 0.9;
    double confounder_flip_rate = 1.0;
    double signature_scale = 0.5;
    double noise_sigma = 0.15;
    /// Weight of the class-independent component of the shortcut patterns.
    double shortcut_common = 1.0;
    /// Per-novel-class multiplier on noise_sigma; empty means all 1.
    std::vector<double> novel_noise_scale;
    /// One entry per novel class; empty means parent j mod M with default transform.
    std::vector<NovelDerivation> novel_derivation;
    std::uint64_t seed = 0;

    std::size_t causal_channels() const { return dim - confounded_channels; }

    NovelDerivation derivation(std::size_t j) const {
        if (!novel_derivation.empty()) return novel_derivation.at(j);
        NovelDerivation d;
        d.parent = j % num_base;
        return d;
    }

    double novel_noise(std::size_t j) const {
        return noise_sigma * (novel_noise_scale.empty() ? 1.0 : novel_noise_scale.at(j));
    }

    void validate() const {
        if (num_base < 1) throw ParameterError("SceneSpec: num_base must be >= 1");
        if (num_novel < 1) throw ParameterError("SceneSpec: num_novel must be >= 1");
        if (points < num_base + num_novel) throw ParameterError("SceneSpec: points must be >= M + K");
        if (dim < 2) throw ParameterError("SceneSpec: dim must be >= 2");
        if (confounded_channels >= dim) throw ParameterError("SceneSpec: need at least one causal channel");
        if (confounder_strength < 0.0 || confounder_strength > 1.0)
            throw ParameterError("SceneSpec: confounder_strength must be in [0, 1]");
        if (confounder_strength > 0.0 && confounded_channels == 0)
            throw ParameterError("SceneSpec: confounded channels required when confounder_strength > 0");
        if (confounder_flip_rate < 0.0 || confounder_flip_rate > 1.0)
            throw ParameterError("SceneSpec: confounder_flip_rate must be in [0, 1]");
        if (!(noise_sigma >= 0.0)) throw ParameterError("SceneSpec: noise_sigma must be >= 0");
        if (!(shortcut_common >= 0.0)) throw ParameterError("SceneSpec: shortcut_common must be >= 0");
        if (!(signature_scale > 0.0)) throw ParameterError("SceneSpec: signature_scale must be > 0");
        if (!novel_derivation.empty() && novel_derivation.size() != num_novel)
            throw ParameterError("SceneSpec: novel_derivation needs one entry per novel class");
        for (const auto& d : novel_derivation)
            if (d.parent >= num_base) throw ParameterError("SceneSpec: novel parent out of range");
        if (!novel_noise_scale.empty() && novel_noise_scale.size() != num_novel)
            throw ParameterError("SceneSpec: novel_noise_scale needs one entry per novel class");
        for (double s : novel_noise_scale)
            if (!(s >= 0.0)) throw ParameterError("SceneSpec: novel_noise_scale must be >= 0");
    }

    /// Canonical text form; the hash of this string identifies the spec.
    std::string canonical() const {
        std::ostringstream os;
        os << "M=" << num_base << ";K=" << num_novel << ";P=" << points << ";d=" << dim
           << ";conf_ch=" << confounded_channels << ";strength=" << exact_double(confounder_strength)
           << ";flip=" << exact_double(confounder_flip_rate) << ";scale=" << exact_double(signature_scale)
           << ";sigma=" << exact_double(noise_sigma) << ";common=" << exact_double(shortcut_common) << ";seed=" << seed << ";novel_noise=";
        for (double s : novel_noise_scale) os << exact_double(s) << ',';
        os << ";derivation=";
        for (std::size_t j = 0; j < num_novel; ++j) {
            const auto d = derivation(j);
            os << d.parent << ':' << exact_double(d.angle) << ':' << exact_double(d.shift) << ',';
        }
        return os.str();
    }

    std::string hash() const { return hex64(fnv1a64(canonical())); }
};

struct ConfounderPlan {
    std::vector<std::size_t> confounded_channels;
    double correlation = 0.0;
    bool decorrelated_in_test = true;
};

/// Class structure shared by every scene of one spec.
struct SceneModel {
    Matrix base_signatures;     // M × d
    Matrix novel_signatures;    // K × d
    Matrix shortcut_patterns;   // M × d, nonzero only on confounded channels
    ConfounderPlan plan;
};

struct PointScene {
    Matrix attrs;                     // P × d
    std::vector<int> base_labels;     // kUnlabeled for novel points
    std::vector<int> novel_labels;    // hidden; kUnlabeled for base points
    std::vector<int> confounder_tags; // 0 / 1
    Split split = Split::Train;
    std::uint64_t seed = 0;
    std::string spec_hash;

    std::size_t size() const { return attrs.rows(); }
    bool is_novel(std::size_t i) const { return base_labels[i] == kUnlabeled; }

    friend bool operator==(const PointScene&, const PointScene&) = default;
};

namespace detail {

inline Vector random_unit(Rng& rng, std::size_t dim, std::size_t offset, std::size_t count) {
    Vector v(dim, 0.0);
    double n = 0.0;
    while (!(n > 1e-9)) {
        for (std::size_t i = 0; i < count; ++i) v[offset + i] = rng.normal();
        n = norm(v);
    }
    for (double& x : v) x /= n;
    return v;
}

}  // namespace detail

inline SceneModel build_scene_model(const SceneSpec& spec) {
    spec.validate();
    Rng rng(derive_seed(spec.seed, 0xC0FFEEULL));
    const std::size_t d = spec.dim;
    const std::size_t causal = spec.causal_channels();
    SceneModel model;

    model.base_signatures = Matrix(spec.num_base, d);
    for (std::size_t b = 0; b < spec.num_base; ++b) {
        Vector s = detail::random_unit(rng, d, 0, causal);
        for (std::size_t c = 0; c < d; ++c) model.base_signatures(b, c) = spec.signature_scale * s[c];
    }

    model.novel_signatures = Matrix(spec.num_novel, d);
    for (std::size_t j = 0; j < spec.num_novel; ++j) {
        const NovelDerivation der = spec.derivation(j);
        const Vector parent = model.base_signatures.row_vector(der.parent);
        const double pn = norm(parent);
        Vector u(d);
        for (std::size_t c = 0; c < d; ++c) u[c] = parent[c] / pn;
        // Second plane axis: random causal direction orthogonalized against u.
        Vector w;
        for (;;) {
            w = detail::random_unit(rng, d, 0, causal);
            const double proj = dot(w, u);
            for (std::size_t c = 0; c < d; ++c) w[c] -= proj * u[c];
            const double wn = norm(w);
            if (wn > 1e-6) {
                for (double& x : w) x /= wn;
                break;
            }
            if (causal == 1) break;  // no room for a plane; rotation degenerates to identity
        }
        const Vector shift_dir = detail::random_unit(rng, d, 0, causal);
        for (std::size_t c = 0; c < d; ++c) {
            const double rotated = pn * (std::cos(der.angle) * u[c] + std::sin(der.angle) * (w.empty() ? 0.0 : w[c]));
            model.novel_signatures(j, c) = rotated + der.shift * shift_dir[c];
        }
    }

    const std::size_t nconf = spec.confounded_channels;
    model.shortcut_patterns = Matrix(spec.num_base, d);
    for (std::size_t b = 0; b < spec.num_base; ++b) {
        Vector v(d, 0.0);
        if (nconf > 0) {
            // Class-specific part: one-hot when the channels allow it, random otherwise.
            const Vector e = nconf >= spec.num_base ? Vector{} : detail::random_unit(rng, d, causal, nconf);
            for (std::size_t c = causal; c < d; ++c)
                v[c] = spec.shortcut_common / std::sqrt(static_cast<double>(nconf)) +
                       (e.empty() ? (c == causal + b ? 1.0 : 0.0) : e[c]);
            const double n = norm(v);
            for (double& x : v) x /= n;
        }
        for (std::size_t c = 0; c < d; ++c) model.shortcut_patterns(b, c) = v[c];
    }

    for (std::size_t c = causal; c < d; ++c) model.plan.confounded_channels.push_back(c);
    model.plan.correlation = spec.confounder_strength;
    model.plan.decorrelated_in_test = spec.confounder_flip_rate > 0.0;
    return model;
}

/// Deterministic in (spec, scene_seed, split).
inline PointScene generate_scene(const SceneSpec& spec, std::uint64_t scene_seed, Split split = Split::Train) {
    const SceneModel model = build_scene_model(spec);
    const std::size_t M = spec.num_base;
    const std::size_t K = spec.num_novel;
    const std::size_t P = spec.points;
    const std::size_t d = spec.dim;
    const std::size_t causal = spec.causal_channels();
    Rng rng(derive_seed(spec.seed, scene_seed));

    // Stratified class draw: counts differ by at most one, order shuffled.
    std::vector<std::size_t> classes(P);
    for (std::size_t i = 0; i < P; ++i) classes[i] = i % (M + K);
    rng.shuffle(classes);

    PointScene scene;
    scene.attrs = Matrix(P, d);
    scene.base_labels.assign(P, kUnlabeled);
    scene.novel_labels.assign(P, kUnlabeled);
    scene.confounder_tags.assign(P, 0);
    scene.split = split;
    scene.seed = scene_seed;
    scene.spec_hash = spec.hash();

    for (std::size_t i = 0; i < P; ++i) {
        const std::size_t cls = classes[i];
        const bool novel = cls >= M;
        auto row = scene.attrs.row(i);
        double sigma = spec.noise_sigma;
        if (novel) {
            const std::size_t j = cls - M;
            scene.novel_labels[i] = static_cast<int>(j);
            sigma = spec.novel_noise(j);
            for (std::size_t c = 0; c < d; ++c) row[c] = model.novel_signatures(j, c);
        } else {
            scene.base_labels[i] = static_cast<int>(cls);
            for (std::size_t c = 0; c < d; ++c) row[c] = model.base_signatures(cls, c);
        }
        for (std::size_t c = 0; c < causal; ++c) row[c] += rng.normal(0.0, sigma);
        for (std::size_t c = causal; c < d; ++c) row[c] += rng.normal(0.0, spec.noise_sigma);

        const int tag = rng.bernoulli(0.5) ? 1 : 0;
        scene.confounder_tags[i] = tag;
        std::size_t shortcut = novel ? rng.index(M) : cls;
        const bool flip = split == Split::Test && rng.bernoulli(spec.confounder_flip_rate);
        const std::size_t random_class = rng.index(M);
        if (flip) shortcut = random_class;
        if (tag == 1 && spec.confounder_strength > 0.0)
            for (std::size_t c = causal; c < d; ++c)
                row[c] += spec.confounder_strength * model.shortcut_patterns(shortcut, c);
    }
    return scene;
}

/// Scene seed for dataset position `index`.
inline std::uint64_t scene_seed_for(const SceneSpec& spec, std::size_t index) {
    return derive_seed(spec.seed ^ 0x5CE9E5EEDULL, index);
}

/// `n_train` train scenes followed by `n_test` test scenes.
inline std::vector<PointScene> generate_dataset(const SceneSpec& spec, std::size_t n_train, std::size_t n_test) {
    if (n_train < 1 || n_test < 1) throw ParameterError("generate_dataset: counts must be >= 1");
    spec.validate();
    std::vector<PointScene> out;
    out.reserve(n_train + n_test);
    for (std::size_t i = 0; i < n_train + n_test; ++i)
        out.push_back(generate_scene(spec, scene_seed_for(spec, i), i < n_train ? Split::Train : Split::Test));
    return out;
}

}  // namespace cncd
