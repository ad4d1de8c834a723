#include "t2m/losses.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "t2m/mesh.hpp"

namespace t2m {

using ad::Tensor;

MatchedLossOut matched_vertex_loss(ad::Tape& tape, const Tensor& pred_positions,
                                   const std::vector<Vec3>& target,
                                   const Assignment& assignment) {
    if (target.empty()) throw std::runtime_error("matched_vertex_loss: empty target");
    std::vector<int> pred_rows;
    std::vector<double> target_vals;
    for (size_t i = 0; i < assignment.mapping.size(); ++i) {
        const int t = assignment.mapping[i];
        if (t < 0) continue;
        pred_rows.push_back(static_cast<int>(i));
        target_vals.push_back(target[t].x);
        target_vals.push_back(target[t].y);
        target_vals.push_back(target[t].z);
    }
    if (pred_rows.empty()) throw std::runtime_error("matched_vertex_loss: empty assignment");

    MatchedLossOut out;
    out.matched = static_cast<int>(pred_rows.size());
    Tensor matched = ad::gather_rows(tape, pred_positions, pred_rows);
    Tensor target_t =
        ad::make_tensor({static_cast<int64_t>(pred_rows.size()), 3}, std::move(target_vals));
    out.loss = ad::scale(tape, ad::l1(tape, matched, target_t), 1.0 / out.matched);
    return out;
}

std::vector<int> edge_labels_from_assignment(const std::vector<std::pair<int, int>>& pairs,
                                             const Assignment& assignment,
                                             const IndexedFaceSet& target) {
    std::set<std::pair<int, int>> gt_edges;
    for (const auto& e : target.edge_set()) gt_edges.insert(e);

    std::vector<int> labels(pairs.size(), 0);
    for (size_t p = 0; p < pairs.size(); ++p) {
        const int ti = assignment.mapping[pairs[p].first];
        const int tj = assignment.mapping[pairs[p].second];
        if (ti < 0 || tj < 0) continue;
        labels[p] = gt_edges.count({std::min(ti, tj), std::max(ti, tj)}) ? 1 : 0;
    }
    return labels;
}

double balanced_pos_weight(const std::vector<int>& labels, double cap) {
    int pos = 0;
    for (int l : labels) pos += l;
    const int neg = static_cast<int>(labels.size()) - pos;
    if (pos == 0 || neg == 0) return 1.0;
    return std::min(static_cast<double>(neg) / pos, cap);
}

ad::Tensor edge_ce_loss(ad::Tape& tape, const Tensor& unordered_logits,
                        const std::vector<int>& labels, double pos_weight) {
    return ad::softmax_ce2(tape, unordered_logits, labels, 1.0, pos_weight);
}

std::vector<int> dual_face_labels(const DualGraph& dual, const IndexedFaceSet& mesh) {
    std::set<std::array<int, 3>> gt_faces;
    for (auto f : mesh.faces) {
        std::sort(f.begin(), f.end());
        gt_faces.insert(f);
    }
    std::vector<int> labels(dual.nodes.size(), 0);
    for (size_t i = 0; i < dual.nodes.size(); ++i)
        labels[i] = gt_faces.count(dual.nodes[i]) ? 1 : 0;
    return labels;
}

ad::Tensor face_ce_loss(ad::Tape& tape, const Tensor& logits, const std::vector<int>& labels,
                        double pos_weight) {
    return ad::softmax_ce2(tape, logits, labels, 1.0, pos_weight);
}

ChamferMeshOut chamfer_mesh_loss(ad::Tape& tape, const Tensor& pred_positions,
                                 const std::vector<std::array<int, 3>>& faces,
                                 const Tensor* face_probs, const IndexedFaceSet& target,
                                 int k_samples, uint64_t seed) {
    const std::vector<SurfaceSample> target_samples = sample_surface(target, k_samples, seed);
    std::vector<double> qv;
    qv.reserve(target_samples.size() * 3);
    for (const auto& s : target_samples) {
        qv.push_back(s.position.x);
        qv.push_back(s.position.y);
        qv.push_back(s.position.z);
    }
    Tensor q = ad::make_tensor({static_cast<int64_t>(target_samples.size()), 3}, std::move(qv));

    ChamferMeshOut out;
    if (faces.empty()) {
        out.vertex_fallback = true;
        out.loss = ad::chamfer_points(tape, pred_positions, nullptr, q);
        return out;
    }

    // Predicted-mesh view of the current positions, for areas and sampling.
    IndexedFaceSet pred;
    const int n = static_cast<int>(pred_positions->shape[0]);
    pred.vertices.resize(n);
    for (int i = 0; i < n; ++i)
        pred.vertices[i] = {pred_positions->values[i * 3], pred_positions->values[i * 3 + 1],
                            pred_positions->values[i * 3 + 2]};
    pred.faces = faces;

    std::vector<BarycentricSample> draws;
    if (face_probs) {
        if ((*face_probs)->size() != static_cast<int64_t>(faces.size()))
            throw std::runtime_error("chamfer_mesh_loss: face_probs size mismatch");
        std::vector<double> weights(faces.size());
        bool any = false;
        for (size_t f = 0; f < faces.size(); ++f) {
            const Vec3& a = pred.vertices[faces[f][0]];
            const Vec3& b = pred.vertices[faces[f][1]];
            const Vec3& c = pred.vertices[faces[f][2]];
            const double area = 0.5 * (b - a).cross(c - a).norm();
            weights[f] = (*face_probs)->values[f] * area;
            any = any || weights[f] > 0.0;
        }
        if (!any) {
            out.vertex_fallback = true;
            out.loss = ad::chamfer_points(tape, pred_positions, nullptr, q);
            return out;
        }
        draws = sample_faces_weighted(pred, weights, k_samples, seed + 1);
    } else {
        draws = sample_surface_barycentric(pred, k_samples, seed);
    }

    std::vector<std::array<int, 3>> sample_vertices(draws.size());
    std::vector<std::array<double, 3>> bary(draws.size());
    std::vector<int> sample_face(draws.size());
    for (size_t s = 0; s < draws.size(); ++s) {
        sample_vertices[s] = faces[draws[s].face];
        bary[s] = draws[s].bary;
        sample_face[s] = draws[s].face;
    }
    Tensor p = ad::bary_points(tape, pred_positions, sample_vertices, bary);

    if (face_probs) {
        Tensor w = ad::gather_rows(tape, *face_probs, sample_face);
        out.loss = ad::chamfer_points(tape, p, &w, q);
    } else {
        out.loss = ad::chamfer_points(tape, p, nullptr, q);
    }
    return out;
}

}  // namespace t2m
