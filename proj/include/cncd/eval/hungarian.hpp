#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cncd/core/errors.hpp"
#include "cncd/core/matrix.hpp"

namespace cncd {

struct AssignmentResult {
    /// matching[r] = matched column of row r, or -1 when r is left unmatched (rows > cols).
    std::vector<int> matching;
    double total_cost = 0.0;
};

/// Minimum-cost injective assignment (Kuhn-Munkres with potentials, O(n³)).
/// Rectangular inputs are padded to square with a constant, which leaves the
/// optimum over real cells unchanged.
inline AssignmentResult hungarian_match(const Matrix& cost) {
    const std::size_t rows = cost.rows();
    const std::size_t cols = cost.cols();
    AssignmentResult res;
    if (rows == 0 || cols == 0) {
        res.matching.assign(rows, -1);
        return res;
    }
    if (!all_finite(cost)) throw UsageError("hungarian_match: non-finite cost");
    const std::size_t n = std::max(rows, cols);
    double pad = 0.0;
    for (double v : cost.data()) pad = std::max(pad, std::abs(v));
    pad += 1.0;
    auto at = [&](std::size_t i, std::size_t j) { return (i < rows && j < cols) ? cost(i, j) : pad; };

    // 1-based arrays; p[j] = row matched to column j.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    res.matching.assign(rows, -1);
    for (std::size_t j = 1; j <= n; ++j) {
        const std::size_t i = p[j];
        if (i >= 1 && i <= rows && j <= cols) {
            res.matching[i - 1] = static_cast<int>(j - 1);
            res.total_cost += cost(i - 1, j - 1);
        }
    }
    return res;
}

}  // namespace cncd
