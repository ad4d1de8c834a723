#pragma once

#include <array>
#include <iosfwd>
#include <vector>

#include "t2m/mesh.hpp"

namespace t2m {

// n predicted vertex positions plus a dense symmetric edge-probability matrix
// (zero diagonal) and its thresholded binary edge set.
struct VertexEdgeGraph {
    std::vector<Vec3> positions;
    std::vector<double> edge_prob;  // n*n row-major, symmetric, zero diagonal
    std::vector<char> edge_set;     // n*n, thresholded

    int size() const { return static_cast<int>(positions.size()); }
    double prob(int i, int j) const { return edge_prob[i * size() + j]; }
    bool connected(int i, int j) const { return edge_set[i * size() + j] != 0; }

    void threshold_edges(double p = 0.5);

    static VertexEdgeGraph from_mesh(const IndexedFaceSet& mesh);
};

// Nodes are candidate triangles (3-cycles of the edge set); dual edges link
// triangles sharing a mesh edge.
struct DualGraph {
    std::vector<std::array<int, 3>> nodes;            // sorted vertex triples
    std::vector<FaceFeatures> node_features;
    std::vector<std::pair<int, int>> adjacency;       // unordered dual edges (a < b)

    int node_count() const { return static_cast<int>(nodes.size()); }
    bool empty() const { return nodes.empty(); }
};

DualGraph build_dual_graph(const VertexEdgeGraph& g);

// Debug text dumps (adjacency lists).
void dump_graph(std::ostream& out, const VertexEdgeGraph& g);
void dump_dual_graph(std::ostream& out, const DualGraph& g);

}  // namespace t2m
