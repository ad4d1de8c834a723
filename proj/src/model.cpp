#include "t2m/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace t2m {

using ad::Tensor;
using nlohmann::json;

std::string ModelConfig::to_json() const {
    json j;
    j["n_vertices"] = n_vertices;
    j["mp_rounds"] = mp_rounds;
    j["face_rounds"] = face_rounds;
    j["node_hidden"] = node_hidden;
    j["edge_hidden"] = edge_hidden;
    j["face_hidden"] = face_hidden;
    j["conv_c1"] = conv_c1;
    j["conv_c2"] = conv_c2;
    j["conv_c3"] = conv_c3;
    j["latent_dim"] = latent_dim;
    j["vertex_head_hidden"] = vertex_head_hidden;
    j["face_use_f2"] = face_use_f2;
    j["direct_faces"] = direct_faces;
    j["direct_max_n"] = direct_max_n;
    j["dropout"] = dropout;
    j["init_seed"] = init_seed;
    return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig c;
    c.n_vertices = j.value("n_vertices", c.n_vertices);
    c.mp_rounds = j.value("mp_rounds", c.mp_rounds);
    c.face_rounds = j.value("face_rounds", c.face_rounds);
    c.node_hidden = j.value("node_hidden", c.node_hidden);
    c.edge_hidden = j.value("edge_hidden", c.edge_hidden);
    c.face_hidden = j.value("face_hidden", c.face_hidden);
    c.conv_c1 = j.value("conv_c1", c.conv_c1);
    c.conv_c2 = j.value("conv_c2", c.conv_c2);
    c.conv_c3 = j.value("conv_c3", c.conv_c3);
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.vertex_head_hidden = j.value("vertex_head_hidden", c.vertex_head_hidden);
    c.face_use_f2 = j.value("face_use_f2", c.face_use_f2);
    c.direct_faces = j.value("direct_faces", c.direct_faces);
    c.direct_max_n = j.value("direct_max_n", c.direct_max_n);
    c.dropout = j.value("dropout", c.dropout);
    c.init_seed = j.value("init_seed", c.init_seed);
    return c;
}

std::vector<std::string> ModelConfig::diff_keys(const ModelConfig& a, const ModelConfig& b) {
    const json ja = json::parse(a.to_json());
    const json jb = json::parse(b.to_json());
    std::vector<std::string> out;
    for (auto it = ja.begin(); it != ja.end(); ++it)
        if (jb.at(it.key()) != it.value()) out.push_back(it.key());
    return out;
}

EdgeList fully_connected_pairs(int n) {
    EdgeList e;
    e.n_nodes = n;
    e.src.reserve(static_cast<size_t>(n) * (n - 1));
    e.dst.reserve(static_cast<size_t>(n) * (n - 1));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) {
                e.src.push_back(i);
                e.dst.push_back(j);
            }
    return e;
}

std::vector<int> transpose_permutation(int n) {
    // Pair (i,j) lives at row i*(n-1) + (j - (j > i)); its transpose is (j,i).
    auto row_of = [n](int i, int j) { return i * (n - 1) + (j > i ? j - 1 : j); };
    std::vector<int> perm(static_cast<size_t>(n) * (n - 1));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (i != j) perm[row_of(i, j)] = row_of(j, i);
    return perm;
}

VertexEdgeGraph VertexEdgeOut::to_graph(double threshold) const {
    VertexEdgeGraph g;
    g.positions = position_values;
    const int n = static_cast<int>(position_values.size());
    g.edge_prob.assign(static_cast<size_t>(n) * n, 0.0);
    for (int e = 0; e < pairs.edge_count(); ++e) {
        const double z0 = pair_logits_sym->values[e * 2];
        const double z1 = pair_logits_sym->values[e * 2 + 1];
        g.edge_prob[pairs.src[e] * n + pairs.dst[e]] = 1.0 / (1.0 + std::exp(z0 - z1));
    }
    g.threshold_edges(threshold);
    return g;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    std::mt19937_64 rng(cfg.init_seed);
    const int h = cfg.node_hidden;
    const int half = h / 2;
    const int eh = cfg.edge_hidden;

    conv1_ = nn::Conv3dLayer::create(store_, "enc.conv1", 5, cfg.conv_c1, 4, 2, 1, rng);
    conv1b_ = nn::Conv3dLayer::create(store_, "enc.conv1b", cfg.conv_c1, cfg.conv_c1, 1, 1, 0, rng);
    conv2_ = nn::Conv3dLayer::create(store_, "enc.conv2", cfg.conv_c1, cfg.conv_c2, 3, 2, 1, rng);
    conv2b_ = nn::Conv3dLayer::create(store_, "enc.conv2b", cfg.conv_c2, cfg.conv_c2, 1, 1, 0, rng);
    conv3_ = nn::Conv3dLayer::create(store_, "enc.conv3", cfg.conv_c2, cfg.conv_c3, 3, 2, 1, rng);
    conv3b_ = nn::Conv3dLayer::create(store_, "enc.conv3b", cfg.conv_c3, cfg.conv_c3, 1, 1, 0, rng);
    conv4_ = nn::Conv3dLayer::create(store_, "enc.conv4", cfg.conv_c3, cfg.latent_dim, 3, 2, 0, rng);

    vh_fc1_ = nn::Linear::create(store_, "ve.head.fc1", cfg.latent_dim, cfg.vertex_head_hidden, rng);
    vh_fc2_ = nn::Linear::create(store_, "ve.head.fc2", cfg.vertex_head_hidden,
                                 static_cast<int64_t>(cfg.n_vertices) * 3, rng, 0.5);

    const double dp = cfg.dropout;
    ve_pos_mlp_ = nn::MlpPair::create(store_, "ve.pos_mlp", 3, half, half, rng, true, true, dp);
    ve_f2_mlp_ =
        nn::MlpPair::create(store_, "ve.f2_mlp", cfg.conv_c2, half, h - half, rng, true, true, dp);
    // The edge head reads the final edge features, so the alternation ends on
    // an edge update: mp_rounds edge MLPs, mp_rounds - 1 node MLPs.
    for (int r = 0; r < cfg.mp_rounds; ++r) {
        ve_rounds_.fe.push_back(nn::MlpPair::create(store_, "ve.r" + std::to_string(r) + ".fe",
                                                    2 * h, eh, eh, rng, true, true, dp));
        if (r + 1 < cfg.mp_rounds)
            ve_rounds_.fv.push_back(nn::MlpPair::create(store_, "ve.r" + std::to_string(r) + ".fv",
                                                        eh, h, h, rng, true, true, dp));
    }
    edge_head_ =
        nn::MlpPair::create(store_, "ve.edge_head", eh, eh, 2, rng, false, false, dp);

    const int fh = cfg.face_hidden;
    if (cfg.face_use_f2) {
        face_feat_mlp_ =
            nn::MlpPair::create(store_, "face.feat_mlp", 8, half, half, rng, true, true, dp);
        face_f2_mlp_ = nn::MlpPair::create(store_, "face.f2_mlp", cfg.conv_c2, half, h - half, rng,
                                           true, true, dp);
    } else {
        face_feat_mlp_ = nn::MlpPair::create(store_, "face.feat_mlp", 8, h, h, rng, true, true, dp);
    }
    for (int r = 0; r < cfg.face_rounds; ++r) {
        face_rounds_.fe.push_back(nn::MlpPair::create(store_, "face.r" + std::to_string(r) + ".fe",
                                                      2 * h, eh, eh, rng, true, true, dp));
        face_rounds_.fv.push_back(nn::MlpPair::create(store_, "face.r" + std::to_string(r) + ".fv",
                                                      eh, h, h, rng, true, true, dp));
    }
    face_head_ = nn::MlpPair::create(store_, "face.head", h, fh, 2, rng, false, false, dp);

    if (cfg.direct_faces) {
        dir_pos_mlp_ =
            nn::MlpPair::create(store_, "direct.pos_mlp", 3, half, half, rng, true, true, dp);
        dir_f2_mlp_ = nn::MlpPair::create(store_, "direct.f2_mlp", cfg.conv_c2, half, h - half,
                                          rng, true, true, dp);
        // Head reads triple features: g_f per round, g_v between rounds only.
        for (int r = 0; r < cfg.face_rounds; ++r) {
            dir_rounds_.fe.push_back(nn::MlpPair::create(
                store_, "direct.r" + std::to_string(r) + ".gf", 3 * h, eh, eh, rng, true, true, dp));
            if (r + 1 < cfg.face_rounds)
                dir_rounds_.fv.push_back(nn::MlpPair::create(
                    store_, "direct.r" + std::to_string(r) + ".gv", eh, h, h, rng, true, true, dp));
        }
        dir_head_ = nn::MlpPair::create(store_, "direct.head", eh, fh, 2, rng, false, false, dp);
    }
}

std::vector<Tensor> Model::params_with_prefix(const std::vector<std::string>& prefixes) const {
    std::vector<Tensor> out;
    for (const Tensor& p : store_.params())
        for (const std::string& pre : prefixes)
            if (p->name.rfind(pre, 0) == 0) {
                out.push_back(p);
                break;
            }
    return out;
}

Tensor Model::tsdf_to_tensor(const TsdfVolume& vol) {
    const int res = vol.resolution;
    const size_t n = vol.voxel_count();
    std::vector<double> v(5 * n);
    for (size_t i = 0; i < n; ++i) {
        v[i] = vol.distance[i] / vol.truncation;  // normalized to [0,1]
        v[n + i] = vol.known[i];
        v[2 * n + i] = vol.coord_x[i];
        v[3 * n + i] = vol.coord_y[i];
        v[4 * n + i] = vol.coord_z[i];
    }
    return ad::make_tensor({5, res, res, res}, std::move(v));
}

EncoderFeatures Model::encode(const nn::ForwardCtx& ctx, const Tensor& vol5) const {
    if (vol5->shape.size() != 4 || vol5->shape[0] != 5)
        throw std::runtime_error("encode: expected 5-channel volume, got " +
                                 ad::shape_str(vol5->shape));
    nn::Tape& t = ctx.tape;
    Tensor h = ad::relu(t, conv1_.forward(t, vol5));   // c1 x 16^3
    h = ad::relu(t, conv1b_.forward(t, h));
    h = ad::relu(t, conv2_.forward(t, h));             // c2 x 8^3
    h = ad::relu(t, conv2b_.forward(t, h));

    EncoderFeatures enc;
    enc.f2_res = static_cast<int>(h->shape[1]);
    enc.f2 = ad::channels_to_rows(t, h);

    h = ad::relu(t, conv3_.forward(t, h));             // c3 x 4^3
    h = ad::relu(t, conv3b_.forward(t, h));
    h = ad::relu(t, conv4_.forward(t, h));             // latent x 1^3
    enc.latent = ad::reshape(t, h, {1, cfg_.latent_dim});
    return enc;
}

Tensor Model::predict_vertices(const nn::ForwardCtx& ctx, const EncoderFeatures& enc) const {
    nn::Tape& t = ctx.tape;
    Tensor h = ad::elu(t, vh_fc1_.forward(t, enc.latent));
    h = vh_fc2_.forward(t, h);
    return ad::reshape(t, h, {cfg_.n_vertices, 3});
}

std::vector<int> Model::f2_cells(const std::vector<Vec3>& positions, const GridTransform& tf,
                                 int f2_res) const {
    const double cell = static_cast<double>(kGridResolution) / f2_res;
    std::vector<int> out(positions.size());
    for (size_t i = 0; i < positions.size(); ++i) {
        const Vec3 g = tf.world_to_grid(positions[i]);
        const int cx = std::clamp(static_cast<int>(std::floor(g.x / cell)), 0, f2_res - 1);
        const int cy = std::clamp(static_cast<int>(std::floor(g.y / cell)), 0, f2_res - 1);
        const int cz = std::clamp(static_cast<int>(std::floor(g.z / cell)), 0, f2_res - 1);
        out[i] = (cz * f2_res + cy) * f2_res + cx;
    }
    return out;
}

Tensor Model::lookup_f2(nn::Tape& tape, const EncoderFeatures& enc,
                        const std::vector<int>& cells) const {
    return ad::gather_rows(tape, enc.f2, cells);
}

std::pair<Tensor, Tensor> Model::run_rounds(const nn::ForwardCtx& ctx,
                                            const MessageRounds& rounds, Tensor nodes,
                                            const EdgeList& edges) const {
    nn::Tape& t = ctx.tape;
    const int n = edges.n_nodes;

    std::vector<char> has_edge(n, 0);
    for (int i : edges.src) has_edge[i] = 1;
    for (int j : edges.dst) has_edge[j] = 1;
    std::vector<int> connected;
    for (int i = 0; i < n; ++i)
        if (has_edge[i]) connected.push_back(i);
    const bool all_connected = static_cast<int>(connected.size()) == n;

    Tensor edge_feats;
    for (size_t r = 0; r < rounds.fe.size(); ++r) {
        if (edges.edge_count() == 0) break;  // nothing to pass; nodes stay as-is
        Tensor hs = ad::gather_rows(t, nodes, edges.src);
        Tensor hd = ad::gather_rows(t, nodes, edges.dst);
        edge_feats = rounds.fe[r].forward(ctx, ad::concat_cols(t, {hs, hd}));
        if (r >= rounds.fv.size()) break;  // alternation ends on the edge update

        // A node aggregates every incident edge, both orders.
        Tensor agg = ad::add(t, ad::segment_sum(t, edge_feats, edges.src, n),
                             ad::segment_sum(t, edge_feats, edges.dst, n));
        if (all_connected) {
            nodes = rounds.fv[r].forward(ctx, agg);
        } else {
            // Isolated nodes receive no messages and keep their features.
            Tensor upd = rounds.fv[r].forward(ctx, ad::gather_rows(t, agg, connected));
            nodes = ad::scatter_rows(t, nodes, connected, upd);
        }
    }
    return {nodes, edge_feats};
}

VertexEdgeOut Model::forward_vertex_edge(const nn::ForwardCtx& ctx, const EncoderFeatures& enc,
                                         const GridTransform& tf) const {
    return edge_outputs(ctx, predict_vertices(ctx, enc), enc, tf);
}

VertexEdgeOut Model::edge_outputs(const nn::ForwardCtx& ctx, const ad::Tensor& positions,
                                  const EncoderFeatures& enc, const GridTransform& tf) const {
    nn::Tape& t = ctx.tape;
    VertexEdgeOut out;
    out.positions = positions;

    const int n = static_cast<int>(positions->shape[0]);
    out.position_values.resize(n);
    for (int i = 0; i < n; ++i)
        out.position_values[i] = {out.positions->values[i * 3], out.positions->values[i * 3 + 1],
                                  out.positions->values[i * 3 + 2]};

    const std::vector<int> cells = f2_cells(out.position_values, tf, enc.f2_res);
    Tensor f2f = lookup_f2(t, enc, cells);
    Tensor nodes = ad::concat_cols(
        t, {ve_pos_mlp_.forward(ctx, out.positions), ve_f2_mlp_.forward(ctx, f2f)});

    out.pairs = fully_connected_pairs(n);
    auto [final_nodes, edge_feats] = run_rounds(ctx, ve_rounds_, nodes, out.pairs);
    (void)final_nodes;

    Tensor logits = edge_head_.forward(ctx, edge_feats);  // (E,2)
    const std::vector<int> perm = transpose_permutation(n);
    out.pair_logits_sym =
        ad::scale(t, ad::add(t, logits, ad::gather_rows(t, logits, perm)), 0.5);

    std::vector<int> upper_rows;
    auto row_of = [n](int i, int j) { return i * (n - 1) + (j > i ? j - 1 : j); };
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            upper_rows.push_back(row_of(i, j));
            out.unordered_pairs.emplace_back(i, j);
        }
    out.unordered_logits = ad::gather_rows(t, out.pair_logits_sym, upper_rows);
    return out;
}

FaceOut Model::forward_faces(const nn::ForwardCtx& ctx, const DualGraph& dual,
                             const EncoderFeatures& enc, const GridTransform& tf) const {
    nn::Tape& t = ctx.tape;
    FaceOut out;
    const int f = dual.node_count();
    if (f == 0) {
        out.logits = ad::zeros({0, 2});
        out.probs = ad::zeros({0, 1});
        return out;
    }

    std::vector<double> feat8(static_cast<size_t>(f) * 8);
    std::vector<Vec3> centroids(f);
    for (int i = 0; i < f; ++i) {
        const auto arr = dual.node_features[i].as_array();
        std::copy(arr.begin(), arr.end(), feat8.begin() + static_cast<size_t>(i) * 8);
        centroids[i] = dual.node_features[i].centroid;
    }
    Tensor feats = ad::make_tensor({f, 8}, std::move(feat8));

    Tensor nodes;
    if (cfg_.face_use_f2) {
        Tensor f2f = lookup_f2(t, enc, f2_cells(centroids, tf, enc.f2_res));
        nodes = ad::concat_cols(
            t, {face_feat_mlp_.forward(ctx, feats), face_f2_mlp_.forward(ctx, f2f)});
    } else {
        nodes = face_feat_mlp_.forward(ctx, feats);
    }

    EdgeList edges;
    edges.n_nodes = f;
    for (const auto& [a, b] : dual.adjacency) {
        edges.src.push_back(a);
        edges.dst.push_back(b);
        edges.src.push_back(b);
        edges.dst.push_back(a);
    }
    auto [final_nodes, edge_feats] = run_rounds(ctx, face_rounds_, nodes, edges);
    (void)edge_feats;

    out.logits = face_head_.forward(ctx, final_nodes);
    out.probs = ad::softmax2_prob(t, out.logits);
    return out;
}

DirectFaceOut Model::forward_direct_faces(const nn::ForwardCtx& ctx, const Tensor& positions,
                                          const EncoderFeatures& enc,
                                          const GridTransform& tf) const {
    if (!cfg_.direct_faces)
        throw std::runtime_error("direct face network disabled in this model config");
    nn::Tape& t = ctx.tape;
    const int n = static_cast<int>(positions->shape[0]);
    if (n > cfg_.direct_max_n)
        throw std::runtime_error("direct face network: n=" + std::to_string(n) +
                                 " exceeds guard " + std::to_string(cfg_.direct_max_n));

    DirectFaceOut out;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            for (int k = j + 1; k < n; ++k) out.triples.push_back({i, j, k});
    const int tri_count = static_cast<int>(out.triples.size());
    if (tri_count == 0) {
        out.logits = ad::zeros({0, 2});
        out.probs = ad::zeros({0, 1});
        return out;
    }

    std::vector<Vec3> pos(n);
    for (int i = 0; i < n; ++i)
        pos[i] = {positions->values[i * 3], positions->values[i * 3 + 1],
                  positions->values[i * 3 + 2]};
    Tensor f2f = lookup_f2(t, enc, f2_cells(pos, tf, enc.f2_res));
    Tensor nodes = ad::concat_cols(
        t, {dir_pos_mlp_.forward(ctx, positions), dir_f2_mlp_.forward(ctx, f2f)});

    // All 6 orderings per triple, contiguous per triple.
    static constexpr int kPerm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                        {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    std::vector<int> o0, o1, o2, seg_triple, member_rows, member_vertex;
    o0.reserve(tri_count * 6);
    for (int s = 0; s < tri_count; ++s) {
        const auto& tri = out.triples[s];
        for (const auto& p : kPerm) {
            o0.push_back(tri[p[0]]);
            o1.push_back(tri[p[1]]);
            o2.push_back(tri[p[2]]);
            seg_triple.push_back(s);
        }
        for (int c = 0; c < 3; ++c) {
            member_rows.push_back(s);
            member_vertex.push_back(tri[c]);
        }
    }

    Tensor tri_feats;
    for (size_t r = 0; r < dir_rounds_.fe.size(); ++r) {
        Tensor cat = ad::concat_cols(t, {ad::gather_rows(t, nodes, o0),
                                         ad::gather_rows(t, nodes, o1),
                                         ad::gather_rows(t, nodes, o2)});
        Tensor ordered = dir_rounds_.fe[r].forward(ctx, cat);  // (6T, eh)
        // Ordering-symmetrized triple feature.
        tri_feats = ad::scale(t, ad::segment_sum(t, ordered, seg_triple, tri_count), 1.0 / 6.0);
        if (r >= dir_rounds_.fv.size()) break;  // head reads the triple features

        Tensor gathered = ad::gather_rows(t, tri_feats, member_rows);
        Tensor agg = ad::segment_sum(t, gathered, member_vertex, n);
        nodes = dir_rounds_.fv[r].forward(ctx, agg);
    }

    out.logits = dir_head_.forward(ctx, tri_feats);
    out.probs = ad::softmax2_prob(t, out.logits);
    return out;
}

}  // namespace t2m
