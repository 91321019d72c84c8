#pragma once

// Independent reference computations used as test oracles.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "cncd/core/matrix.hpp"

namespace cncd::fixtures {

/// Minimum over all injective row→column maps by enumeration (rows <= cols).
inline double brute_force_assignment(const Matrix& cost) {
    std::vector<int> cols(cost.cols());
    std::iota(cols.begin(), cols.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t r = 0; r < cost.rows(); ++r) s += cost(r, static_cast<std::size_t>(cols[r]));
        best = std::min(best, s);
    } while (std::next_permutation(cols.begin(), cols.end()));
    return best;
}

inline double naive_cosine(const std::vector<double>& a, const std::vector<double>& b) {
    long double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<long double>(a[i]) * b[i];
        aa += static_cast<long double>(a[i]) * a[i];
        bb += static_cast<long double>(b[i]) * b[i];
    }
    return static_cast<double>(ab / std::sqrt(aa * bb));
}

/// Softmax without max-subtraction, in long double (fine for small scores).
inline std::vector<double> naive_softmax(const std::vector<double>& s, double temperature) {
    long double z = 0;
    for (double v : s) z += std::exp(static_cast<long double>(v) / temperature);
    std::vector<double> out;
    for (double v : s) out.push_back(static_cast<double>(std::exp(static_cast<long double>(v) / temperature) / z));
    return out;
}

}  // namespace cncd::fixtures
