#include "t2m/graph.hpp"

#include <algorithm>
#include <map>
#include <ostream>

namespace t2m {

void VertexEdgeGraph::threshold_edges(double p) {
    const int n = size();
    edge_set.assign(static_cast<size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j && edge_prob[i * n + j] > p) edge_set[i * n + j] = 1;
}

VertexEdgeGraph VertexEdgeGraph::from_mesh(const IndexedFaceSet& mesh) {
    VertexEdgeGraph g;
    g.positions = mesh.vertices;
    const int n = g.size();
    g.edge_prob.assign(static_cast<size_t>(n) * n, 0.0);
    g.edge_set.assign(static_cast<size_t>(n) * n, 0);
    for (const auto& [i, j] : mesh.edge_set()) {
        g.edge_prob[i * n + j] = g.edge_prob[j * n + i] = 1.0;
        g.edge_set[i * n + j] = g.edge_set[j * n + i] = 1;
    }
    return g;
}

DualGraph build_dual_graph(const VertexEdgeGraph& g) {
    DualGraph dual;
    const int n = g.size();
    if (n < 3 || g.edge_set.empty()) return dual;

    // All 3-cycles i<j<k of the thresholded edge set.
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            if (!g.connected(i, j)) continue;
            for (int k = j + 1; k < n; ++k) {
                if (g.connected(i, k) && g.connected(j, k)) dual.nodes.push_back({i, j, k});
            }
        }
    }

    dual.node_features.reserve(dual.nodes.size());
    for (const auto& t : dual.nodes) {
        // Position-lexicographic order keeps the descriptor independent of
        // the vertex labeling.
        std::array<Vec3, 3> p{g.positions[t[0]], g.positions[t[1]], g.positions[t[2]]};
        std::sort(p.begin(), p.end(), lex_less);
        dual.node_features.push_back(face_features(p[0], p[1], p[2]));
    }

    // Triangles sharing a mesh edge become dual neighbors.
    std::map<std::pair<int, int>, std::vector<int>> edge_to_tris;
    for (int t = 0; t < dual.node_count(); ++t) {
        const auto& tri = dual.nodes[t];
        edge_to_tris[{tri[0], tri[1]}].push_back(t);
        edge_to_tris[{tri[0], tri[2]}].push_back(t);
        edge_to_tris[{tri[1], tri[2]}].push_back(t);
    }
    for (const auto& [edge, tris] : edge_to_tris) {
        for (size_t a = 0; a < tris.size(); ++a)
            for (size_t b = a + 1; b < tris.size(); ++b)
                dual.adjacency.emplace_back(tris[a], tris[b]);
    }
    std::sort(dual.adjacency.begin(), dual.adjacency.end());
    dual.adjacency.erase(std::unique(dual.adjacency.begin(), dual.adjacency.end()),
                         dual.adjacency.end());
    return dual;
}

void dump_graph(std::ostream& out, const VertexEdgeGraph& g) {
    const int n = g.size();
    out << "vertex_edge_graph n=" << n << "\n";
    for (int i = 0; i < n; ++i) {
        out << i << ":";
        for (int j = 0; j < n; ++j)
            if (j != i && !g.edge_set.empty() && g.connected(i, j)) out << ' ' << j;
        out << "\n";
    }
}

void dump_dual_graph(std::ostream& out, const DualGraph& g) {
    out << "dual_graph nodes=" << g.node_count() << " edges=" << g.adjacency.size() << "\n";
    for (int i = 0; i < g.node_count(); ++i) {
        const auto& t = g.nodes[i];
        out << i << " tri(" << t[0] << ',' << t[1] << ',' << t[2] << "):";
        for (const auto& [a, b] : g.adjacency) {
            if (a == i) out << ' ' << b;
            else if (b == i) out << ' ' << a;
        }
        out << "\n";
    }
}

}  // namespace t2m
