#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "t2m/graph.hpp"
#include "t2m/nn.hpp"
#include "t2m/scan.hpp"

namespace t2m {

struct ModelConfig {
    int n_vertices = 100;
    int mp_rounds = 3;        // vertex-edge message-passing rounds
    int face_rounds = 3;      // dual / direct face network rounds
    int node_hidden = 64;
    int edge_hidden = 64;
    int face_hidden = 64;
    int conv_c1 = 16;
    int conv_c2 = 32;         // f2 feature width
    int conv_c3 = 64;
    int latent_dim = 256;
    int vertex_head_hidden = 512;
    bool face_use_f2 = true;  // concat f2 lookup at face centroids
    bool direct_faces = false;  // build the O(n^3) direct face head
    int direct_max_n = 40;
    double dropout = 0.5;
    uint64_t init_seed = 1;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
    // Keys whose values differ between two configs (for resume validation).
    static std::vector<std::string> diff_keys(const ModelConfig& a, const ModelConfig& b);
};

struct EncoderFeatures {
    ad::Tensor f2;      // (f2_res^3, conv_c2), row per grid cell
    ad::Tensor latent;  // (1, latent_dim)
    int f2_res = 8;
};

// Ordered edge list over graph nodes (no self edges).
struct EdgeList {
    int n_nodes = 0;
    std::vector<int> src, dst;

    int edge_count() const { return static_cast<int>(src.size()); }
};

EdgeList fully_connected_pairs(int n);
// Row index of ordered pair (j,i) for each (i,j) in a fully connected list.
std::vector<int> transpose_permutation(int n);

struct VertexEdgeOut {
    ad::Tensor positions;        // (n,3)
    std::vector<Vec3> position_values;
    EdgeList pairs;              // ordered, fully connected
    ad::Tensor pair_logits_sym;  // (E,2), symmetrized over (i,j)/(j,i)
    ad::Tensor unordered_logits; // (E/2,2), rows follow unordered_pairs
    std::vector<std::pair<int, int>> unordered_pairs;  // i < j

    // Probability matrix (symmetric, zero diagonal) + thresholded edges.
    VertexEdgeGraph to_graph(double threshold = 0.5) const;
};

struct FaceOut {
    ad::Tensor logits;  // (F,2)
    ad::Tensor probs;   // (F,1), keep probability per dual node
};

struct DirectFaceOut {
    std::vector<std::array<int, 3>> triples;  // i<j<k vertex triples
    ad::Tensor logits;                        // (T,2), ordering-symmetrized
    ad::Tensor probs;                         // (T,1)
};

class Model {
public:
    explicit Model(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& store() { return store_; }
    const nn::ParamStore& store() const { return store_; }
    // Parameters whose names start with any of the prefixes.
    std::vector<ad::Tensor> params_with_prefix(const std::vector<std::string>& prefixes) const;

    static ad::Tensor tsdf_to_tensor(const TsdfVolume& vol);

    EncoderFeatures encode(const nn::ForwardCtx& ctx, const ad::Tensor& vol5) const;
    ad::Tensor predict_vertices(const nn::ForwardCtx& ctx, const EncoderFeatures& enc) const;

    // Nearest-cell lookup (boundary clamped) of world positions into f2 rows.
    std::vector<int> f2_cells(const std::vector<Vec3>& positions, const GridTransform& tf,
                              int f2_res) const;
    ad::Tensor lookup_f2(nn::Tape& tape, const EncoderFeatures& enc,
                         const std::vector<int>& cells) const;

    // Joint vertex + edge prediction from an encoded volume.
    VertexEdgeOut forward_vertex_edge(const nn::ForwardCtx& ctx, const EncoderFeatures& enc,
                                      const GridTransform& tf) const;

    // Edge classification for externally supplied vertex positions (n,3);
    // forward_vertex_edge delegates here after predicting positions.
    VertexEdgeOut edge_outputs(const nn::ForwardCtx& ctx, const ad::Tensor& positions,
                               const EncoderFeatures& enc, const GridTransform& tf) const;

    // Dual-graph face classification; empty dual yields empty tensors.
    FaceOut forward_faces(const nn::ForwardCtx& ctx, const DualGraph& dual,
                          const EncoderFeatures& enc, const GridTransform& tf) const;

    // Direct O(n^3) face ablation on given vertex positions. Throws when the
    // vertex count exceeds config().direct_max_n.
    DirectFaceOut forward_direct_faces(const nn::ForwardCtx& ctx, const ad::Tensor& positions,
                                       const EncoderFeatures& enc, const GridTransform& tf) const;

private:
    struct MessageRounds {
        std::vector<nn::MlpPair> fe, fv;
    };
    // Alternating edge <- f_e([h_i,h_j]) and node <- f_v(sum incident) updates;
    // returns final node features and last-round edge features. Nodes with no
    // incident edges pass through unchanged.
    std::pair<ad::Tensor, ad::Tensor> run_rounds(const nn::ForwardCtx& ctx,
                                                 const MessageRounds& rounds, ad::Tensor nodes,
                                                 const EdgeList& edges) const;

    ModelConfig cfg_;
    nn::ParamStore store_;

    // encoder
    nn::Conv3dLayer conv1_, conv1b_, conv2_, conv2b_, conv3_, conv3b_, conv4_;
    // vertex head (two fully connected layers)
    nn::Linear vh_fc1_, vh_fc2_;
    // vertex-edge graph net
    nn::MlpPair ve_pos_mlp_, ve_f2_mlp_;
    MessageRounds ve_rounds_;
    nn::MlpPair edge_head_;
    // dual face net
    nn::MlpPair face_feat_mlp_, face_f2_mlp_;
    MessageRounds face_rounds_;
    nn::MlpPair face_head_;
    // direct face ablation net (params only when cfg.direct_faces)
    nn::MlpPair dir_pos_mlp_, dir_f2_mlp_;
    MessageRounds dir_rounds_;  // fe = g_f (3-way concat), fv = g_v
    nn::MlpPair dir_head_;
};

}  // namespace t2m
