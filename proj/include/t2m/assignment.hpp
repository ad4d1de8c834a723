#pragma once

#include <vector>

#include "t2m/geometry.hpp"

namespace t2m {

// Dense row-major cost matrix.
struct CostMatrix {
    int rows = 0, cols = 0;
    std::vector<double> cost;

    double at(int i, int j) const { return cost[i * cols + j]; }
    double& at(int i, int j) { return cost[i * cols + j]; }
};

// Injective partial map predicted index -> target index, |mapping| = min(n, m).
struct Assignment {
    std::vector<int> mapping;  // size rows; -1 for unassigned predictions
    double total_cost = 0.0;

    int matched_count() const {
        int c = 0;
        for (int t : mapping) c += (t >= 0);
        return c;
    }
};

// Minimum-total-cost injective matching of size min(rows, cols); O(n^3)
// shortest-augmenting-path solver. Deterministic for tied optima.
Assignment hungarian(const CostMatrix& cost);

// Repeatedly picks the globally cheapest unassigned (row, col) pair; ties
// broken by lowest row index then column index.
Assignment greedy_match(const CostMatrix& cost);

// cost[i][j] = L1 distance between pred i and target j.
CostMatrix vertex_cost_matrix(const std::vector<Vec3>& pred, const std::vector<Vec3>& target);

}  // namespace t2m
