#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"
#include "cncd/core/random.hpp"

namespace cncd {

/// K novel prototypes (rows).
struct NovelPrototypeSet {
    Matrix prototypes;

    std::size_t count() const { return prototypes.rows(); }
    friend bool operator==(const NovelPrototypeSet&, const NovelPrototypeSet&) = default;
};

struct KMeansResult {
    NovelPrototypeSet centroids;
    std::vector<std::size_t> assignment;
    std::size_t iterations = 0;
    bool reseeded = false;
    double inertia = 0.0;  // Σ squared distance to the assigned centroid
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

/// k-means++ seeding; returns row indices of the chosen seeds.
inline std::vector<std::size_t> kmeanspp_seeds(const Matrix& x, std::size_t k, Rng& rng) {
    std::vector<std::size_t> seeds{rng.index(x.rows())};
    std::vector<double> d2(x.rows(), std::numeric_limits<double>::infinity());
    while (seeds.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            d2[i] = std::min(d2[i], sq_dist(x.row(i), x.row(seeds.back())));
            total += d2[i];
        }
        if (!(total > 0.0)) return seeds;  // fewer distinct points than k
        double target = rng.uniform() * total;
        std::size_t pick = x.rows() - 1;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            target -= d2[i];
            if (target < 0.0) {
                pick = i;
                break;
            }
        }
        seeds.push_back(pick);
    }
    return seeds;
}

inline bool lloyd(const Matrix& x, Matrix& centroids, std::vector<std::size_t>& assignment, std::size_t max_iters,
                  std::size_t& iterations) {
    const std::size_t k = centroids.rows();
    assignment.assign(x.rows(), 0);
    for (std::size_t it = 0; it < max_iters; ++it) {
        bool changed = it == 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            std::size_t best = 0;
            double bd = sq_dist(x.row(i), centroids.row(0));
            for (std::size_t c = 1; c < k; ++c) {
                const double dd = sq_dist(x.row(i), centroids.row(c));
                if (dd < bd) {
                    bd = dd;
                    best = c;
                }
            }
            if (assignment[i] != best) changed = true;
            assignment[i] = best;
        }
        Matrix next(k, x.cols());
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            counts[assignment[i]] += 1;
            auto row = next.row(assignment[i]);
            for (std::size_t c = 0; c < x.cols(); ++c) row[c] += x(i, c);
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) return false;  // empty cluster
            for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);
        }
        centroids = std::move(next);
        iterations = it + 1;
        if (!changed) break;
    }
    return true;
}

}  // namespace detail

inline double inertia(const Matrix& x, const Matrix& centroids, const std::vector<std::size_t>& assignment) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) s += detail::sq_dist(x.row(i), centroids.row(assignment[i]));
    return s;
}

/// One Lloyd's run with k-means++ seeding, capped at `max_iters`, deterministic per seed.
/// A degenerate run (too few distinct points, empty cluster) is re-seeded once.
inline KMeansResult kmeans_single(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100) {
    if (k == 0) throw ParameterError("kmeans: k must be >= 1");
    if (x.rows() < k) throw UsageError("kmeans: fewer points than clusters");
    KMeansResult res;
    for (int attempt = 0; attempt < 2; ++attempt) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        const auto seeds = detail::kmeanspp_seeds(x, k, rng);
        if (seeds.size() == k) {
            Matrix c = select_rows(x, seeds);
            if (detail::lloyd(x, c, res.assignment, max_iters, res.iterations)) {
                res.centroids.prototypes = std::move(c);
                res.reseeded = attempt > 0;
                res.inertia = inertia(x, res.centroids.prototypes, res.assignment);
                return res;
            }
        }
    }
    throw DegenerateInputError("kmeans: degenerate clustering (duplicate points) after re-seeding");
}

/// Best of `restarts` independent runs by inertia (first run wins ties).
inline KMeansResult kmeans(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iters = 100,
                           std::size_t restarts = 10) {
    if (restarts == 0) throw ParameterError("kmeans: restarts must be >= 1");
    KMeansResult best = kmeans_single(x, k, derive_seed(seed, 0x4B4D), max_iters);
    for (std::size_t r = 1; r < restarts; ++r) {
        KMeansResult cand = kmeans_single(x, k, derive_seed(seed, 0x4B4D + r), max_iters);
        if (cand.inertia < best.inertia) best = std::move(cand);
    }
    return best;
}

/// Nearest-centroid (squared Euclidean) assignment.
inline std::vector<std::size_t> assign_nearest(const Matrix& x, const Matrix& centroids) {
    std::vector<std::size_t> out(x.rows(), 0);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < centroids.rows(); ++c) {
            const double dd = detail::sq_dist(x.row(i), centroids.row(c));
            if (dd < bd) {
                bd = dd;
                out[i] = c;
            }
        }
    }
    return out;
}

/// Novel prototypes {n_j} from novel-point features.
inline NovelPrototypeSet cluster_novel_prototypes(const Matrix& novel_features, std::size_t k, std::uint64_t seed,
                                                  std::size_t restarts = 10) {
    return kmeans(novel_features, k, seed, 100, restarts).centroids;
}

}  // namespace cncd
