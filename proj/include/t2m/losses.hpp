#pragma once

#include <array>
#include <vector>

#include "t2m/assignment.hpp"
#include "t2m/graph.hpp"
#include "t2m/tensor.hpp"

namespace t2m {

// Mean L1 distance over matched pairs; gradients reach predicted positions
// only (the assignment is constant within a step). Throws on empty target.
struct MatchedLossOut {
    ad::Tensor loss;
    int matched = 0;
};
MatchedLossOut matched_vertex_loss(ad::Tape& tape, const ad::Tensor& pred_positions,
                                   const std::vector<Vec3>& target, const Assignment& assignment);

// Labels for unordered prediction pairs: positive iff both endpoints are
// matched and their targets form a ground-truth mesh edge.
std::vector<int> edge_labels_from_assignment(const std::vector<std::pair<int, int>>& pairs,
                                             const Assignment& assignment,
                                             const IndexedFaceSet& target);

// Positive-class weight #neg/#pos capped at `cap`; 1.0 when a class is absent.
double balanced_pos_weight(const std::vector<int>& labels, double cap = 50.0);

// Mean 2-class CE over unordered pairs with optional positive re-weighting.
ad::Tensor edge_ce_loss(ad::Tape& tape, const ad::Tensor& unordered_logits,
                        const std::vector<int>& labels, double pos_weight = 1.0);

// Candidate label: 1 iff the dual node's vertex triple is an actual face of
// the source mesh.
std::vector<int> dual_face_labels(const DualGraph& dual, const IndexedFaceSet& mesh);

ad::Tensor face_ce_loss(ad::Tape& tape, const ad::Tensor& logits, const std::vector<int>& labels,
                        double pos_weight = 1.0);

// Symmetric squared chamfer between points sampled from the predicted face set
// and the target mesh. Prediction-side faces are drawn proportionally to
// keep-probability x area (uniform area sampling when face_probs is null), and
// each sample carries its face probability as an importance weight so the
// probabilities receive gradient. Falls back to vertex-only chamfer when the
// face set is empty, flagged in the result.
struct ChamferMeshOut {
    ad::Tensor loss;
    bool vertex_fallback = false;
};
ChamferMeshOut chamfer_mesh_loss(ad::Tape& tape, const ad::Tensor& pred_positions,
                                 const std::vector<std::array<int, 3>>& faces,
                                 const ad::Tensor* face_probs, const IndexedFaceSet& target,
                                 int k_samples, uint64_t seed);

}  // namespace t2m
