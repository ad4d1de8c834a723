#include "t2m/assignment.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace t2m {

namespace {

// Square Kuhn–Munkres via shortest augmenting paths (potentials u, v).
// Returns row -> col for an n x n cost lookup.
std::vector<int> solve_square(int n, const std::vector<double>& cost) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);

    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
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
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }

    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j]) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
    Assignment out;
    out.mapping.assign(cost.rows, -1);
    if (cost.rows == 0 || cost.cols == 0) return out;
    for (double c : cost.cost)
        if (!std::isfinite(c)) throw std::runtime_error("hungarian: non-finite cost");

    // Pad to square with zero-cost dummies; dummy pairings carry no cost, so
    // the induced real matching has size min(rows, cols) and minimum cost.
    const int n = std::max(cost.rows, cost.cols);
    std::vector<double> sq(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < cost.rows; ++i)
        for (int j = 0; j < cost.cols; ++j) sq[i * n + j] = cost.at(i, j);

    const std::vector<int> row_to_col = solve_square(n, sq);
    for (int i = 0; i < cost.rows; ++i) {
        const int j = row_to_col[i];
        if (j >= 0 && j < cost.cols) {
            out.mapping[i] = j;
            out.total_cost += cost.at(i, j);
        }
    }
    return out;
}

Assignment greedy_match(const CostMatrix& cost) {
    Assignment out;
    out.mapping.assign(cost.rows, -1);
    if (cost.rows == 0 || cost.cols == 0) return out;
    for (double c : cost.cost)
        if (!std::isfinite(c)) throw std::runtime_error("greedy_match: non-finite cost");

    std::vector<char> row_used(cost.rows, 0), col_used(cost.cols, 0);
    const int picks = std::min(cost.rows, cost.cols);
    for (int step = 0; step < picks; ++step) {
        int best_i = -1, best_j = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < cost.rows; ++i) {
            if (row_used[i]) continue;
            for (int j = 0; j < cost.cols; ++j) {
                if (col_used[j]) continue;
                if (cost.at(i, j) < best) {  // strict: keeps lowest (row, col) on ties
                    best = cost.at(i, j);
                    best_i = i;
                    best_j = j;
                }
            }
        }
        row_used[best_i] = 1;
        col_used[best_j] = 1;
        out.mapping[best_i] = best_j;
        out.total_cost += best;
    }
    return out;
}

CostMatrix vertex_cost_matrix(const std::vector<Vec3>& pred, const std::vector<Vec3>& target) {
    CostMatrix m;
    m.rows = static_cast<int>(pred.size());
    m.cols = static_cast<int>(target.size());
    m.cost.resize(static_cast<size_t>(m.rows) * m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) m.at(i, j) = (pred[i] - target[j]).norm1();
    return m;
}

}  // namespace t2m
